"""Command-line entry point: ``fedapa run | ablate | sweep-mu | validate-config``.

Precedence, lowest to highest: built-in defaults, the config file, ``--set
key=value`` overrides, then the dedicated ``--seed`` and ``--out`` flags.
Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import config as cfgmod
from .config import ConfigError
from .orchestrator import ExperimentResult, run_experiment, write_outputs

log = logging.getLogger("fedapa")

DEFAULT_MU_VALUES = (0.0, 0.3, 0.5, 0.7, 1.0)

# name -> strategy-field overrides; post-processing variants first, then strategy variants
ABLATION_VARIANTS: list[tuple[str, dict[str, Any]]] = [
    ("fedapa", dict(strategy="fedapa", pms=True)),
    ("wo_clipping", dict(strategy="fedapa", pms=True, ablate_clip=True)),
    ("wo_self_weight", dict(strategy="fedapa", pms=True, ablate_self_weight=True)),
    ("wo_normalization", dict(strategy="fedapa", pms=True, ablate_normalize=True)),
    (
        "wo_all",
        dict(
            strategy="fedapa", pms=True, ablate_clip=True,
            ablate_self_weight=True, ablate_normalize=True,
        ),
    ),
    ("baseline_fedavg", dict(strategy="fedavg", pms=False)),
    ("baseline_apa", dict(strategy="fedapa", pms=False)),
    ("baseline_apa_pms", dict(strategy="fedapa", pms=True)),
]
_NO_ABLATION = dict(ablate_clip=False, ablate_self_weight=False, ablate_normalize=False)


def load_config(args: argparse.Namespace) -> dict[str, Any]:
    raw = cfgmod.load_file(args.config) if args.config else {}
    for item in args.set or []:
        key, value = cfgmod.parse_override(item)
        raw[key] = value
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        raw["output.dir"] = args.out
    return cfgmod.resolve(raw)


def summary_line(result: ExperimentResult, out_dir: Path) -> str:
    last = result.final
    return (
        f"summary rounds={last.round} mean_acc={last.mean_acc!r} "
        f"weighted_acc={last.weighted_acc!r} "
        f"total_transmitted_params={last.cumulative_transmitted_params} out={out_dir}"
    )


def _config_comment(resolved: dict[str, Any]) -> str:
    return "# config: " + json.dumps(resolved, sort_keys=True) + "\n"


def cmd_run(args: argparse.Namespace) -> int:
    resolved = load_config(args)
    cfg = cfgmod.to_experiment(resolved)
    result = run_experiment(cfg, workers=args.workers, snapshot_weights=resolved["output.weight_snapshots"])
    out = write_outputs(result, resolved["output.dir"], resolved)
    print(summary_line(result, out))
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    resolved = load_config(args)
    cfgmod.to_experiment(resolved)
    print(json.dumps(resolved, indent=2, sort_keys=True))
    return 0


def _run_variant(cfg, resolved, workers: int, out_dir: Path) -> tuple[ExperimentResult | None, str]:
    try:
        result = run_experiment(cfg, workers=workers)
    except RuntimeError as exc:
        # divergence of an ablated variant is a finding, not a command failure
        log.warning("%s", exc)
        return None, f"failed: {exc}"
    write_outputs(result, out_dir, resolved)
    return result, "ok"


def cmd_ablate(args: argparse.Namespace) -> int:
    resolved = load_config(args)
    base = cfgmod.to_experiment(resolved)
    out = Path(resolved["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, changes in ABLATION_VARIANTS:
        cfg = cfgmod.with_strategy(base, **{**_NO_ABLATION, **changes})
        variant_resolved = {**resolved, **{k: v for k, v in changes.items()}}
        result, status = _run_variant(cfg, variant_resolved, args.workers, out / name)
        st = cfg.strategy
        row = {
            "variant": name,
            "strategy": st.strategy,
            "pms": st.pms,
            "ablate_clip": st.ablate_clip,
            "ablate_self_weight": st.ablate_self_weight,
            "ablate_normalize": st.ablate_normalize,
            "mean_acc": result.final.mean_acc if result else "",
            "weighted_acc": result.final.weighted_acc if result else "",
            "total_transmitted_params": result.final.cumulative_transmitted_params if result else "",
            "dataset_sha256": result.dataset_digest if result else "",
            "partition_sha256": result.partition.digest() if result else "",
            "status": status,
        }
        rows.append(row)
        print(f"{name}: mean_acc={row['mean_acc']} status={status}")
    path = out / "ablation.csv"
    _write_table(path, rows, resolved)
    print(f"wrote {path}")
    return 0


def cmd_sweep_mu(args: argparse.Namespace) -> int:
    resolved = load_config(args)
    base = cfgmod.to_experiment(resolved)
    values = args.values if args.values is not None else list(DEFAULT_MU_VALUES)
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ConfigError("mu", f"sweep value {v} outside [0, 1]")
    out = Path(resolved["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for mu in values:
        cfg = cfgmod.with_strategy(base, mu=mu)
        result, status = _run_variant(cfg, {**resolved, "mu": mu}, args.workers, out / f"mu_{mu:g}")
        rows.append(
            {
                "mu": mu,
                "mean_acc": result.final.mean_acc if result else "",
                "weighted_acc": result.final.weighted_acc if result else "",
                "status": status,
            }
        )
        print(f"mu={mu:g}: mean_acc={rows[-1]['mean_acc']}")
    path = out / "sweep_mu.csv"
    _write_table(path, rows, resolved)
    print(f"wrote {path}")
    return 0


def _write_table(path: Path, rows: list[dict[str, Any]], resolved: dict[str, Any]) -> None:
    with path.open("w", newline="") as fh:
        fh.write(_config_comment(resolved))
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _mu_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedapa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, runs: bool = True) -> None:
        p.add_argument("--config", type=str, help="YAML or JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", type=str, help="output directory (overrides output.dir)")
        if runs:
            p.add_argument("--workers", type=int, default=1, help="threads for client updates")

    p = sub.add_parser("run", help="run one experiment and write metrics")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("ablate", help="post-processing and strategy ablations")
    common(p)
    p.set_defaults(func=cmd_ablate)
    p = sub.add_parser("sweep-mu", help="one run per self-weight value")
    common(p)
    p.add_argument("--values", type=_mu_list, help="comma-separated mu values (default 0,0.3,0.5,0.7,1)")
    p.set_defaults(func=cmd_sweep_mu)
    p = sub.add_parser("validate-config", help="check a config file and print the resolved values")
    common(p, runs=False)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be at least 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config key '{exc.key}': {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
