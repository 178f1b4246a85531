"""
Command line entry point.

    python backend/cli.py run config.yaml --seed 3 --mode federated
    python backend/cli.py report results/<run>/result.json out/
    python backend/cli.py synth synthetic.yaml matrices.csv labels.txt
    python backend/cli.py check
"""
import os
import sys
import argparse
import logging
from pathlib import Path
from typing import List, Optional

# Add backend directory to Python path for imports
sys.path.insert(0, os.path.dirname(__file__))

import pandas as pd
import yaml
from pydantic import ValidationError

from checks import run_self_checks
from config import FLAG_FIELDS, LOG_LEVEL, load_experiment_config
from data import synth_planted, write_connectomes
from errors import UsageError, WorkbenchError
from experiment import run_experiment
from models import ModelKind, RunMode, SyntheticSpec
from report import summarize_accuracies, write_report
from store import ResultStore, load_result

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedrepro",
        description="Federated GNN training with top-K biomarker reproducibility analysis.",
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    run = verbs.add_parser("run", help="Run an experiment from a YAML config")
    run.add_argument("config", type=str, help="Experiment config file")
    run.add_argument("--seed", type=int, help="Master seed")
    run.add_argument("--hospitals", type=int, help="Number of hospitals H")
    run.add_argument("--rounds", type=int, help="Communication rounds C")
    run.add_argument("--epochs", type=int, help="Local epochs E per round")
    run.add_argument("--batch", type=int, help="Batch size B")
    run.add_argument("--top-k", dest="top_k", type=int, help="Biomarker count K")
    run.add_argument("--mode", choices=[mode.value for mode in RunMode], help="Training arms to run")
    run.add_argument("--models", type=str, help=f"Comma-separated model pool ({','.join(k.value for k in ModelKind)})")
    run.add_argument("--downsample", type=int, help="Image downsampling factor")

    report = verbs.add_parser("report", help="Re-render tables and figures from a result file")
    report.add_argument("result_file", type=str, help="Persisted result.json")
    report.add_argument("out_dir", type=str, help="Directory for report assets")

    synth = verbs.add_parser("synth", help="Write a planted-biomarker dataset in connectome format")
    synth.add_argument("spec", type=str, help="Synthetic spec YAML")
    synth.add_argument("matrix_out", type=str, help="Output matrix file")
    synth.add_argument("labels_out", type=str, help="Output labels file")

    check = verbs.add_parser("check", help="Run gradient and invariant self-checks")
    check.add_argument("--seed", type=int, default=0, help="Seed for the random instances")
    return parser


def _run(args: argparse.Namespace) -> int:
    overrides = {flag: getattr(args, flag) for flag in FLAG_FIELDS}
    cfg = load_experiment_config(args.config, overrides)
    store = ResultStore(cfg.output_dir)
    result = run_experiment(cfg, store=store)

    overview = summarize_accuracies(result)
    table = pd.DataFrame([summary.model_dump(mode="json") for summary in overview.summaries])
    print(table.to_string(index=False))
    for mode, model in overview.selected_models.items():
        print(f"{mode}: most reproducible model {model.value}")
    print(f"results: {store.run_dir(result.run_id)}")
    return 0


def _report(args: argparse.Namespace) -> int:
    result = load_result(args.result_file)
    written = write_report(result, args.out_dir)
    print(f"wrote {len(written)} files to {args.out_dir}")
    return 0


def _synth(args: argparse.Namespace) -> int:
    try:
        document = yaml.safe_load(Path(args.spec).read_text()) or {}
        spec = SyntheticSpec.model_validate(document)
    except OSError as e:
        raise UsageError(f"cannot read synthetic spec {args.spec}: {e}")
    except yaml.YAMLError as e:
        raise UsageError(f"synthetic spec {args.spec} is not valid YAML: {e}")
    except ValidationError as e:
        error = e.errors()[0]
        raise UsageError(error["msg"], field=".".join(str(part) for part in error["loc"]) or "spec")
    dataset, planted = synth_planted(
        spec.n_nodes, spec.samples, spec.planted_nodes, spec.signal_strength, spec.noise, spec.seed
    )
    write_connectomes(dataset, args.matrix_out, args.labels_out)
    print(f"planted nodes: {sorted(planted)}")
    return 0


def _check(args: argparse.Namespace) -> int:
    results = run_self_checks(args.seed)
    table = pd.DataFrame([result.model_dump() for result in results], columns=["name", "passed", "detail"])
    print(table.to_string(index=False))
    return 0 if all(result.passed for result in results) else 1


VERBS = {
    "run": _run,
    "report": _report,
    "synth": _synth,
    "check": _check,
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return UsageError.exit_code if e.code else 0
    try:
        return VERBS[args.verb](args)
    except WorkbenchError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
