"""scikit-learn style wrappers.

:class:`AlignedCoordinates` is a transformer between original states
``(X, Y, PX, PY)`` and aligned coordinates ``(theta1, theta2, x, y)``;
:class:`CenterManifoldVerifier` runs the verification in ``fit`` and exposes
the certificate.  Both take their parameters in the constructor and learn
nothing from data; ``fit`` ignores ``X`` beyond validation.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import RunConfig
from .rtbp import SUN_EARTH_MU


class AlignedCoordinates(TransformerMixin, BaseEstimator):
    """``transform`` applies ``phi``; ``inverse_transform`` its numerical inverse (non-rigorous)."""

    def __init__(self, mu: float = SUN_EARTH_MU, nf_order: int = 4, newton_iters: int = 6):
        self.mu = mu
        self.nf_order = nf_order
        self.newton_iters = newton_iters

    def fit(self, X=None, y=None):
        from .normalform import build_phi
        from .rtbp import RtbpParams

        if X is not None:
            check_array(X)
        self.params_ = RtbpParams.certified(self.mu)
        self.phi_ = build_phi(self.params_, self.nf_order)
        self.n_features_in_ = 4
        return self

    def transform(self, X):
        check_is_fitted(self, "phi_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 4:
            raise ValueError(f"expected 4 columns (X, Y, PX, PY), got {X.shape[1]}")
        return self.phi_(X)

    def inverse_transform(self, P):
        check_is_fitted(self, "phi_")
        P = check_array(P, dtype=float)
        return self.phi_.inverse_newton(P, self.newton_iters)


class CenterManifoldVerifier(BaseEstimator):
    """Run the full verification for a parameter set.

    Constructor arguments are those of :class:`cmcert.config.RunConfig`
    (any subset, plus ``preset``).  After ``fit`` the certificate is in
    ``certificate_``; ``score`` returns 1.0 for PASS and 0.0 otherwise.
    """

    def __init__(self, preset: str | None = "desk", **overrides):
        self.preset = preset
        self.overrides = overrides

    # overrides are folded into get_params so that clone() round-trips
    def get_params(self, deep=True):
        return {"preset": self.preset, **self.overrides}

    def set_params(self, **params):
        if "preset" in params:
            self.preset = params.pop("preset")
        self.overrides = {**self.overrides, **params}
        return self

    def config(self) -> RunConfig:
        d = dict(self.overrides)
        if self.preset:
            d["preset"] = self.preset
        return RunConfig.from_dict(d)

    def fit(self, X=None, y=None, phi=None):
        from .verifier import run_verification

        cfg = self.config()
        self.config_ = cfg
        self.certificate_ = run_verification(cfg, phi=phi)
        self.passed_ = self.certificate_.passed
        q = self.certificate_.quantities
        self.lipschitz_ = tuple(q.get(k) for k in ("L_s", "L_u", "L_c"))
        self.energy_window_ = (q.get("h_interior_sup"), q.get("h_boundary_inf"))
        return self

    def score(self, X=None, y=None) -> float:
        check_is_fitted(self, "certificate_")
        return 1.0 if self.passed_ else 0.0

    def __sklearn_is_fitted__(self):
        return hasattr(self, "certificate_")


__all__ = ["AlignedCoordinates", "CenterManifoldVerifier"]
