"""Command-line entry point.

Verbs: operators, transport, run, sweep, nsf; each takes --config.
Exit codes: 0 success, 2 configuration error, 3 numerical abort,
4 cache or I/O error.
"""

import sys
import argparse

from .harness import (ConfigError, parse_config, emit_manifest,
                      emit_transport, run_single, run_sweep, run_nsf_only,
                      report_emit)
from .kinetic import KineticAbort
from .nsf import NSFAbort
from .fredholm import FredholmError
from .cache import CacheError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CACHE = 4


def _build_parser():
    p = argparse.ArgumentParser(
        prog="bfd",
        description="Quantum kinetic suite: operators, transport "
                    "coefficients, scaled runs, hydrodynamic-limit sweeps.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, hlp in [("operators", "assemble and cache the velocity-space "
                                    "operators; emit the cache manifest"),
                      ("transport", "solve the correctors and report the "
                                    "transport coefficients"),
                      ("run", "one kinetic run at a single epsilon"),
                      ("sweep", "epsilon-sweep against the limiting flow"),
                      ("nsf", "integrate only the limiting system")]:
        sp = sub.add_parser(verb, help=hlp)
        sp.add_argument("--config", required=True,
                        help="key = value experiment configuration file")
        if verb == "run":
            sp.add_argument("--epsilon", type=float, default=None,
                            help="Knudsen number (default: first of the "
                                 "configured list)")
    return p


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.verb == "operators":
            manifest, path = emit_manifest(cfg)
            print("manifest: %s (%d entries)"
                  % (path, len(manifest["entries"])))
        elif args.verb == "transport":
            tc, txt, js = emit_transport(cfg)
            print("nu_star=%.8g kappa_star=%.8g lambda=%.8g"
                  % (tc.nu_star, tc.kappa_star, tc.lambda_coercive))
            print("report: %s, %s" % (txt, js))
        elif args.verb == "run":
            eps = args.epsilon if args.epsilon is not None \
                else cfg.epsilons[0]
            if not (0.0 < eps < 1.0):
                raise ConfigError("epsilon must lie in (0,1)")
            state, rows, out = run_single(cfg, eps)
            last = rows[-1]
            print("t=%.6g E_N=%.8g F in [%.4g, %.4g]"
                  % (last["t"], last["E_N"], last["min_F"], last["max_F"]))
            print("diagnostics: %s" % out)
        elif args.verb == "sweep":
            report = run_sweep(cfg)
            csv_path, json_path = report_emit(report, cfg.output_dir)
            print("report: %s, %s" % (csv_path, json_path))
        elif args.verb == "nsf":
            state, rows, path = run_nsf_only(cfg)
            print("t=%.6g energy=%.8g" % (state.t, rows[-1]["energy"]))
            print("energy log: %s" % path)
        return EXIT_OK
    except ConfigError as e:
        print("config error: %s" % e, file=sys.stderr)
        return EXIT_CONFIG
    except (KineticAbort, NSFAbort, FredholmError) as e:
        print("numerical abort: %s" % e, file=sys.stderr)
        return EXIT_NUMERIC
    except (CacheError, OSError) as e:
        print("cache/io error: %s" % e, file=sys.stderr)
        return EXIT_CACHE


if __name__ == "__main__":
    sys.exit(main())
