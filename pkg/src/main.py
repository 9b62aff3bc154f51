import argparse
import logging
import os
import sys

# Add the parent directory to the system path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import ConfigError, load_run_config, setup_logging
from src.knowd import DivergenceError

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 1, 2, 3


def cmd_generate_data(args):
    from src.syngen import default_counts, generate_dataset, load_scene_spec, manifest_hash

    spec = load_scene_spec(args.spec)
    counts = default_counts(args.n_syn, args.n_real, spec.crossing_probability)
    generate_dataset(spec, counts, args.out)
    digest = manifest_hash(args.out)
    logging.info(f"Dataset at {args.out}, manifest sha256 {digest}")
    print(f"Generated dataset in {args.out} (manifest sha256 {digest})")


def cmd_train(args):
    from src.harness import train
    from src.syngen import load_manifest

    config = load_run_config(args.config)
    result = train(config, load_manifest(args.data or config.data_dir))
    print(f"Checkpoint written to {result.checkpoint_path}")


def cmd_eval(args):
    from src.harness import evaluate, load_checkpoint
    from src.syngen import load_manifest

    loaded = load_checkpoint(args.checkpoint)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    report = evaluate(loaded, load_manifest(args.data or loaded.config.data_dir), split=args.split,
                      out_dir=out_dir, max_ttc=args.max_ttc)
    print(report.to_json())


def cmd_ablate(args):
    from src.harness import ablate
    from src.syngen import load_manifest

    config = load_run_config(args.config)
    ablate(config, load_manifest(args.data or config.data_dir))
    print(f"Ablation table written to {os.path.join(config.run_dir, 'ablation.md')}")


def cmd_compare_modes(args):
    from src.harness import compare_modes
    from src.syngen import load_manifest

    config = load_run_config(args.config)
    _, summary = compare_modes(config, load_manifest(args.data or config.data_dir))
    print(summary.to_string(index=False))


def cmd_report(args):
    from src.report import generate_report

    generate_report(args.run)
    print(f"Report written to {os.path.join(args.run, 'report.md')}")


def cmd_dashboard(args):
    from src.dashboard import run_dashboard

    run_dashboard(args.run, port=args.port)


def build_parser():
    parser = argparse.ArgumentParser(prog="s2r", description="Gated syn-to-real pedestrian crossing prediction")
    parser.add_argument("--log-file", default=None, help="log file (default: the config's log_file)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render the procedural two-domain dataset")
    p.add_argument("--spec", default="config/scene.yaml")
    p.add_argument("--out", required=True)
    p.add_argument("--n-syn", type=int, default=400)
    p.add_argument("--n-real", type=int, default=300)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", default="config/config.yaml")
    p.add_argument("--data", default=None, help="dataset directory (default: the config's data_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on real test clips")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--max-ttc", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory (default: next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="branch-subset ablation plus configured sweeps")
    p.add_argument("--config", default="config/config.yaml")
    p.add_argument("--data", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare-modes", help="train and evaluate the four training modes over seeds")
    p.add_argument("--config", default="config/config.yaml")
    p.add_argument("--data", default=None)
    p.set_defaults(func=cmd_compare_modes)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("dashboard", help="serve the run monitor")
    p.add_argument("--run", required=True)
    p.add_argument("--port", type=int, default=8050)
    p.set_defaults(func=cmd_dashboard)
    return parser


def _log_settings(args):
    """log_file/log_level from the run config when the command has one"""
    log_file, level = "logs/main.log", "INFO"
    config_path = getattr(args, "config", None)
    if config_path and os.path.exists(config_path):
        try:
            config = load_run_config(config_path)
            log_file, level = config.log_file, config.log_level
        except ConfigError:
            pass
    return args.log_file or log_file, level


def main(argv=None):
    args = build_parser().parse_args(argv)
    log_file, level = _log_settings(args)
    setup_logging(log_file, level)

    try:
        logging.info(f"Starting command {args.command}")
        args.func(args)
        return EXIT_OK
    except ConfigError as e:
        logging.error(f"Configuration error: {str(e)}")
        print(f"Configuration error: {str(e)}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        logging.error(f"Training diverged: {str(e)}")
        print(f"Training diverged: {str(e)}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except KeyboardInterrupt:
        logging.info("Stopped by user.")
        return EXIT_ERROR
    except Exception as e:
        logging.critical(f"Unhandled exception: {str(e)}")
        print(f"Error: {str(e)}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
