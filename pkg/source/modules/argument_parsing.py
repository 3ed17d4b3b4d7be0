from __future__ import annotations

import sys
from argparse import ArgumentParser, Namespace
from pathlib import Path

from modules.enums import ExitCode, FeatureKind, GroupBy, ReportFormat

KIND_CHOICES = ", ".join(kind.value for kind in FeatureKind)


def error(parser: ArgumentParser, msg: str):
    """Prints usage plus `msg` and exits with the usage exit code."""
    parser.print_usage(sys.stderr)
    print(f"{parser.prog}: error: {msg}", file=sys.stderr)
    sys.exit(ExitCode.USAGE)


def add_help(parser: ArgumentParser):
    parser.add_argument(
        parser.prefix_chars + "h",
        parser.prefix_chars * 2 + "help",
        action="store_true",
        help="show this help message and exit",
    )


def show_help(parser: ArgumentParser, subparsers: dict[str, ArgumentParser], args: Namespace):
    if args.command in subparsers:
        subparsers[args.command].print_help()
    else:
        parser.print_help()


def _report_format(parser: ArgumentParser):
    parser.add_argument(
        "--format",
        default=ReportFormat.TEXT.value,
        help=f"Report format: {', '.join(f.value for f in ReportFormat)}.",
    )


def _manifest(parser: ArgumentParser):
    parser.add_argument("--manifest", type=Path, required=True, help="manifest.jsonl or the dataset folder.")


def _select(parser: ArgumentParser):
    parser.add_argument(
        "--select",
        default=None,
        help='Record selector, e.g. "room=Rc subject=s1,s2"; default is every record.',
    )


def build_parser(description: str) -> tuple[ArgumentParser, dict[str, ArgumentParser]]:
    parser = ArgumentParser(prog="usense", description=description, add_help=False)
    add_help(parser)
    parser.add_argument("-d", "-debug", "--debug", help="Enable debug logging.", action="store_true")
    parser.add_argument("--config", type=Path, default=None, help="INI file overriding the sensing settings.")
    parser.add_argument("--seed", type=int, default=None, help="Top-level seed for every random choice.")
    parser.add_argument("-o", "--output", type=Path, default=Path("usense-out"), help="Output folder.")
    parser.add_argument("--workers", type=int, default=1, help="Worker threads for synthesis and extraction.")

    commands = parser.add_subparsers(dest="command")
    subparsers: dict[str, ArgumentParser] = {}

    def add(name: str, help_text: str) -> ArgumentParser:
        sub = commands.add_parser(name, help=help_text, add_help=False)
        add_help(sub)
        subparsers[name] = sub
        return sub

    gen = add("gen", "Synthesize a labeled dataset of recordings.")
    gen.add_argument("--subjects", type=int, default=4)
    gen.add_argument("--instances", type=int, default=10, help="Instances per class, subject and room.")
    gen.add_argument("--rooms", default="Rc", help="Comma separated room profiles (Ra, Rb, Rc).")
    gen.add_argument("--classes", default="all", help="Comma separated action classes, or all.")
    gen.add_argument("--snr", default=None, help="Noise level in dB, or none.")
    gen.add_argument("--channels", type=int, choices=(1, 2), default=None)

    extract = add("extract", "Extract and cache feature matrices.")
    _manifest(extract)
    extract.add_argument("--kinds", default="all", help=f"Comma separated feature kinds ({KIND_CHOICES}) or all.")

    train = add("train", "Train a classifier on the selected records.")
    _manifest(train)
    train.add_argument("--kind", default=FeatureKind.F_RENV.value, help=f"Feature kind ({KIND_CHOICES}).")
    _select(train)
    train.add_argument("--c", type=float, default=None, help="Regularization C.")
    train.add_argument("--epochs", type=int, default=None)
    train.add_argument("--grid-c", default=None, help="Comma separated C values chosen by inner cross-validation.")
    train.add_argument("--model", type=Path, default=None, help="Where to write the model.")

    evaluate = add("eval", "Score a trained model on the selected records.")
    _manifest(evaluate)
    evaluate.add_argument("--model", type=Path, required=True)
    _select(evaluate)
    _report_format(evaluate)

    xval = add("xval", "Grouped k-fold cross-validation.")
    _manifest(xval)
    xval.add_argument("--kinds", default="all")
    xval.add_argument("--k", type=int, default=4)
    xval.add_argument("--group-by", default=GroupBy.SUBJECT.value, choices=[g.value for g in GroupBy])
    _select(xval)
    xval.add_argument("--grid-c", default=None)
    _report_format(xval)

    report = add("report", "Run every condition of a condition file for every feature kind.")
    _manifest(report)
    report.add_argument("--conditions", type=Path, required=True)
    report.add_argument("--kinds", default="all")
    _report_format(report)

    return parser, subparsers
