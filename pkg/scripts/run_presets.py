"""Run preset sweeps and write one CSV per preset into results/.

    python scripts/run_presets.py                  # every preset, SBL-MCMC
    python scripts/run_presets.py single_20db --methods sbl-mcmc,omp,periodogram
"""
import argparse
import sys
from pathlib import Path

from isac_sbl.harness import load_config, run_sweep, write_csv

HERE = Path(__file__).resolve().parent


def main() -> int:
    presets = sorted(p.stem for p in (HERE / "presets").glob("*.json"))
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="*", help=f"presets to run (default: all of {', '.join(presets)})")
    ap.add_argument("--methods", default="sbl-mcmc", help="comma-separated estimators")
    ap.add_argument("--trials", type=int, help="override the preset trial count")
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    unknown = sorted(set(args.names) - set(presets))
    if unknown:
        ap.error(f"unknown preset(s): {', '.join(unknown)}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in args.names or presets:
        sc = load_config(HERE / "presets" / f"{name}.json")
        if args.trials:
            sc = sc.replace(trials=args.trials)
        log = lambda msg: print(f"[{name}] {msg}", file=sys.stderr, flush=True)
        res = run_sweep(sc, threads=args.threads, methods=args.methods.split(","), log=log)
        write_csv(res, out_dir / f"{name}.csv")
        for r in res.rows:
            print(f"{name} {r.method} {r.axis}={r.value:g} P_cd={r.p_cd:.2f} "
                  f"RMSE={r.rmse_range_m:.4g} m / {r.rmse_velocity_mps:.4g} m/s / {r.rmse_angle_deg:.4g} deg")
    return 0


if __name__ == "__main__":
    sys.exit(main())
