"""
Command-line entry point: ``python -m gridmarl.main <run|train|evaluate|validate>``.
"""
import argparse
import sys
from typing import Sequence

from gridmarl.config import settings
from gridmarl.core.errors import GridMarlError
from gridmarl.services import runner
from gridmarl.services.scenarios import dump_scenario, load_scenario
from gridmarl.utils.logging_config import app_logger, error_logger


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridmarl", description="Multi-agent grid-edge RL toolkit")
    verbs = parser.add_subparsers(dest="verb", required=True)

    def common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--scenario", required=True, help="Scenario YAML path or bundled name (case_a, case_b)")
        sub.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
        sub.add_argument("--out-dir", default=None, help=f"Artifact directory (default under {settings.runs_folder}/)")

    run = verbs.add_parser("run", help="Run one logged episode")
    common(run)
    run.add_argument("--checkpoint", default=None, help="Checkpoint directory; random actions when omitted")

    train = verbs.add_parser("train", help="Train with the scenario's trainer")
    common(train)
    train.add_argument("--iterations", type=int, default=None, help="Override the configured iteration count")

    evaluate = verbs.add_parser("evaluate", help="Noise-free evaluation episodes")
    common(evaluate)
    evaluate.add_argument("--checkpoint", default=None, help="Checkpoint directory, or 'random'")
    evaluate.add_argument("--episodes", type=int, default=10)

    validate = verbs.add_parser("validate", help="Check a scenario and print its normalized form")
    common(validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_scenario(args.scenario, seed=args.seed)
        if args.verb == "validate":
            print(dump_scenario(config), end="")
        elif args.verb == "run":
            summary = runner.run(config, checkpoint=args.checkpoint, out_dir=args.out_dir)
            print(summary.model_dump_json(indent=2))
        elif args.verb == "train":
            out_dir = runner.train(config, out_dir=args.out_dir, iterations=args.iterations)
            print(f"artifacts: {out_dir}")
        elif args.verb == "evaluate":
            report = runner.evaluate(config, args.checkpoint, n_episodes=args.episodes, out_dir=args.out_dir)
            print(report.model_dump_json(indent=2))
        return 0
    except GridMarlError as e:
        error_logger.error(f"{args.verb} failed [{e.category}]: {e}")
        print(f"error [{e.category}]: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        error_logger.error(f"{args.verb} failed unexpectedly: {e}", exc_info=True)
        print(f"error [internal]: {e}", file=sys.stderr)
        return 1
    finally:
        app_logger.debug(f"{args.verb} done")


if __name__ == "__main__":
    sys.exit(main())
