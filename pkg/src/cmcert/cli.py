"""Command line interface: ``cmcert normalform | verify | export-region``.

Configuration is layered: preset, then ``--config`` TOML file, then
individual flags.  The coordinate change is cached in the directory named
by ``--cache-dir`` or the ``CMCERT_CACHE_DIR`` environment variable.

Exit codes: 0 for a passing certificate, 2 for configuration errors, and
``10 + k`` for a failure in the k-th verification stage (see
:data:`cmcert.verifier.EXIT_CODES`).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import MISSING, fields
from pathlib import Path

from .config import ConfigError, RunConfig, preset
from .verifier import EXIT_CODES, EXIT_CONFIG, Certificate, run_verification

log = logging.getLogger("cmcert")

_TYPES = {"float": float, "int": int, "str": str, "str | None": str}
_SKIP = {"preset"}


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("run configuration")
    g.add_argument("--preset", choices=("paper", "desk"), help="start from a named parameter set")
    g.add_argument("--config", metavar="TOML", help="configuration file (applied after the preset)")
    for f in fields(RunConfig):
        if f.name in _SKIP:
            continue
        typ = _TYPES[str(f.type)]
        default = None if f.default is MISSING else f.default
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=typ, default=None,
                       metavar=typ.__name__.upper(), help=f"(default {default!r})")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings and the final summary")


def config_from_args(args) -> RunConfig:
    d = {}
    if args.config:
        import tomli
        d.update(tomli.loads(Path(args.config).read_text()))
    if args.preset:
        d["preset"] = args.preset
    for f in fields(RunConfig):
        if f.name in _SKIP:
            continue
        v = getattr(args, f.name, None)
        if v is not None:
            d[f.name] = v
    return RunConfig.from_dict(d) if d else RunConfig()


def load_or_build_phi(cfg: RunConfig, force: bool = False, path=None):
    """Cached coordinate change for ``cfg`` (rebuilt when missing, stale or ``force``)."""
    from .normalform import CoordinateChange, build_phi
    from .rtbp import RtbpParams

    path = Path(path) if path else cfg.cache_path()
    if path.exists() and not force:
        try:
            phi = CoordinateChange.load(path)
            if phi.mu == cfg.mu and phi.order == cfg.nf_order:
                log.info("loaded coordinate change from %s", path)
                return phi, path, False
            log.warning("cache %s does not match the configuration; rebuilding", path)
        except (ValueError, KeyError) as exc:
            log.warning("unreadable cache %s (%s); rebuilding", path, exc)
    phi = build_phi(RtbpParams.certified(cfg.mu), cfg.nf_order)
    path.parent.mkdir(parents=True, exist_ok=True)
    phi.save(path)
    log.info("cached coordinate change at %s", path)
    return phi, path, True


def cmd_normalform(args) -> int:
    cfg = config_from_args(args)
    phi, path, _ = load_or_build_phi(cfg, force=args.force, path=args.output)
    L = phi.linear
    print(f"mu        = {phi.mu!r}")
    print(f"gamma_hat = {phi.g!r}")
    print(f"c2        = {L.c2!r}")
    print(f"lambda    = {L.lam!r}")
    print(f"nu        = {L.nu!r}")
    print(f"order     = {phi.order}")
    print(f"roundtrip residual = {phi.roundtrip_residual():.3e}")
    print(f"written to {path}")
    return 0


def cmd_verify(args) -> int:
    cfg = config_from_args(args)
    phi, _, _ = load_or_build_phi(cfg)

    def progress(stage, msg):
        log.info("[%s] %s", stage, msg)

    cert = run_verification(cfg, phi=phi, progress=progress)
    out = Path(args.certificate or cfg.certificate_path or "certificate.json")
    cert.save(out)
    print(cert.summary())
    print(f"certificate written to {out}")
    return cert.exit_code


def cmd_export_region(args) -> int:
    from .export import export_region

    cert = Certificate.load(args.certificate)
    if not cert.passed:
        print(f"error: certificate {args.certificate} is not a PASS; refusing to export", file=sys.stderr)
        return 1
    cfg = RunConfig.from_dict({k: v for k, v in cert.config.items() if v is not None})
    if args.cache_dir:
        cfg = cfg.replace(cache_dir=args.cache_dir)
    phi, _, _ = load_or_build_phi(cfg)
    paths, err = export_region(phi, cfg.R, cfg.r, cfg.v, args.out_dir, args.samples, args.fiber_samples)
    for p in paths:
        print(f"wrote {p}")
    print(f"round-trip error max |phi(X) - p| = {err:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cmcert", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normalform", help="build and cache the aligned coordinate change")
    _add_config_flags(p)
    p.add_argument("--output", help="write here instead of the cache directory")
    p.add_argument("--force", action="store_true", help="rebuild even when cached")
    p.set_defaults(func=cmd_normalform)

    p = sub.add_parser("verify", help="run the verification and write a certificate")
    _add_config_flags(p)
    p.add_argument("--certificate", help="certificate JSON path (default certificate.json)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export-region", help="non-rigorous point clouds of the region for plotting")
    p.add_argument("--certificate", required=True, help="a PASS certificate")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.add_argument("--samples", type=int, default=360, help="angles per circle")
    p.add_argument("--fiber-samples", type=int, default=3, help="grid points per fiber direction")
    p.add_argument("--cache-dir", help="coordinate change cache directory")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_export_region)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("done in %.1f s", time.perf_counter() - t0)
    return code


__all__ = ["main", "build_parser", "EXIT_CODES"]

if __name__ == "__main__":
    sys.exit(main())
