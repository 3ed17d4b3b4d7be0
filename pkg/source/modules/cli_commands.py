from __future__ import annotations

import logging
from argparse import Namespace
from dataclasses import replace
from pathlib import Path

from modules import settings
from modules._platform import set_config_file
from modules.chirp_core import ChirpParams
from modules.classifier import SvmHyperparams, load_model, predict, save_model, train_linear_svm
from modules.enums import ActionClass, ExitCode, FeatureKind, GroupBy, ReportFormat
from modules.errors import DataError, UsageError
from modules.harness import (
    ConditionDescriptor,
    EvalReport,
    FeatureStore,
    combine_reports,
    emit_report,
    load_conditions,
    run_condition,
    run_xval,
    select_c,
)
from modules.manifest import DatasetManifest, Selector
from modules.scene_sim import ROOM_NAMES, DatasetSpec, generate_dataset
from modules.wav_io import read_wav_header

logger = logging.getLogger()


def parse_kinds(text: str | None) -> list[FeatureKind]:
    if text is None or text.strip().lower() == "all":
        return list(FeatureKind)
    try:
        return [FeatureKind.parse(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise UsageError(str(e)) from None


def parse_classes(text: str | None) -> tuple[ActionClass, ...]:
    if text is None or text.strip().lower() == "all":
        return tuple(ActionClass)
    try:
        return tuple(ActionClass.from_slug(part) for part in text.split(",") if part.strip())
    except ValueError as e:
        raise UsageError(str(e)) from None


def parse_grid(text: str | None) -> list[float] | None:
    if not text:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--grid-c needs comma separated numbers, got {text!r}") from None


def parse_format(text: str) -> ReportFormat:
    try:
        return ReportFormat(text)
    except ValueError:
        raise UsageError(f"Unknown report format {text!r}") from None


def parse_snr(text: str) -> float | None:
    if text.strip().lower() in settings.NO_NOISE:
        return None
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"--snr needs a number of dB or none, got {text!r}") from None


def _hyperparams(args: Namespace) -> SvmHyperparams:
    base = settings.get_svm_hyperparams()
    return SvmHyperparams(
        C=base.C if getattr(args, "c", None) is None else args.c,
        epochs=base.epochs if getattr(args, "epochs", None) is None else args.epochs,
        seed=base.seed if args.seed is None else args.seed,
    )


def _seed(args: Namespace) -> int:
    return settings.get_svm_hyperparams().seed if args.seed is None else args.seed


def _store(args: Namespace, manifest: DatasetManifest) -> FeatureStore:
    return FeatureStore(
        manifest,
        params=settings.get_chirp_params(),
        geometry=settings.get_sensing_geometry(),
        config=settings.get_extraction_config(),
        workers=args.workers,
        cache_dir=args.output / "features",
    )


def check_recordings(manifest: DatasetManifest, params: ChirpParams) -> float:
    """Header check of every WAV before any worker starts; returns the total duration in seconds."""
    total = 0.0
    for record in manifest.records:
        path = manifest.wav_path(record)
        header = read_wav_header(path)
        if header.rate != params.fs:
            raise DataError(f"{path} is sampled at {header.rate} Hz, configuration expects {params.fs:g} Hz")
        if header.frames < params.n_cycle:
            raise DataError(f"{path} holds {header.frames} frames, shorter than one chirp cycle")
        total += header.duration
    return total


def _write(args: Namespace, name: str, reports: list[EvalReport], fmt: ReportFormat) -> None:
    rendered = emit_report(reports, fmt)
    print(rendered)
    suffix = "csv" if fmt is ReportFormat.CSV else "txt"
    path = args.output / f"{name}.{suffix}"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(rendered, encoding="utf-8")
    except OSError as e:
        raise DataError(f"Failed to write report {path}: {e}") from e
    logger.info(f"Report written to {path}")


def cli_gen(args: Namespace) -> ExitCode:
    rooms = tuple(r.strip() for r in args.rooms.split(",") if r.strip())
    unknown = [r for r in rooms if r not in ROOM_NAMES]
    if unknown:
        raise UsageError(f"Unknown rooms {unknown}; choose from {', '.join(ROOM_NAMES)}")

    params = settings.get_chirp_params()
    geometry = settings.get_sensing_geometry()
    sim = settings.get_sim_config(seed=_seed(args))
    overrides = {}
    if args.snr is not None:
        overrides["snr_db"] = parse_snr(args.snr)
    if args.channels is not None:
        overrides.update(channel_count=args.channels, mic_offsets=sim.for_channels(args.channels).mic_offsets)
    if overrides:
        sim = replace(sim, **overrides)

    spec = DatasetSpec(
        classes=parse_classes(args.classes),
        subjects=args.subjects,
        instances=args.instances,
        rooms=rooms,
        sim=sim,
        seed=_seed(args),
    )
    manifest = generate_dataset(spec, args.output, params, geometry, workers=args.workers)
    logger.info(f"Dataset of {len(manifest)} recordings ready in {args.output}")
    return ExitCode.SUCCESS


def cli_extract(args: Namespace) -> ExitCode:
    manifest = DatasetManifest.load(args.manifest)
    duration = check_recordings(manifest, settings.get_chirp_params())
    logger.info(f"{len(manifest)} recordings, {duration:.1f} s of audio")
    store = _store(args, manifest)
    store.prefetch(manifest.records, parse_kinds(args.kinds))
    logger.info(f"Features cached under {store.cache_dir}")
    return ExitCode.SUCCESS


def cli_train(args: Namespace) -> ExitCode:
    manifest = DatasetManifest.load(args.manifest)
    records = manifest.select(args.select)
    kind = parse_kinds(args.kind)[0]
    hyperparams = _hyperparams(args)

    store = _store(args, manifest)
    matrices = store.matrices(records, kind)
    labels = [m.label for m in matrices]
    grid = parse_grid(args.grid_c)
    if grid:
        subjects = {r.id: r.subject for r in records}
        c = select_c(matrices, labels, [subjects[m.recording_id] for m in matrices], grid, hyperparams)
        hyperparams = SvmHyperparams(C=c, epochs=hyperparams.epochs, seed=hyperparams.seed)

    model = train_linear_svm(matrices, labels, hyperparams)
    model.feature_kind = kind.value
    model.config_hash = matrices[0].config_hash
    save_model(model, args.model or args.output / f"model-{kind.value}.usvm")
    return ExitCode.SUCCESS


def cli_eval(args: Namespace) -> ExitCode:
    fmt = parse_format(args.format)
    manifest = DatasetManifest.load(args.manifest)
    model = load_model(args.model)
    if not model.feature_kind:
        raise UsageError(f"{args.model} does not record its feature kind")
    kind = FeatureKind.parse(model.feature_kind)

    records = manifest.select(args.select)
    matrices = _store(args, manifest).matrices(records, kind)
    if model.config_hash and matrices and matrices[0].config_hash != model.config_hash:
        logger.warning("Model was trained with different chirp or extraction settings")
    predicted, _ = predict(model, matrices)
    descriptor = ConditionDescriptor(
        name="eval",
        train=str(args.model),
        eval=str(Selector.parse(args.select)),
        feature_kind=kind,
    )
    report = EvalReport.from_predictions(descriptor, [m.label for m in matrices], predicted)
    _write(args, "eval", [report], fmt)
    return ExitCode.SUCCESS


def cli_xval(args: Namespace) -> ExitCode:
    fmt = parse_format(args.format)
    manifest = DatasetManifest.load(args.manifest)
    manifest = manifest.subset(manifest.select(args.select))
    store = _store(args, manifest)
    kinds = parse_kinds(args.kinds)
    store.prefetch(manifest.records, kinds)

    reports = []
    for kind in kinds:
        folds = run_xval(
            manifest,
            kind,
            k=args.k,
            group_by=GroupBy(args.group_by),
            hyperparams=_hyperparams(args),
            store=store,
            seed=_seed(args),
            grid_c=parse_grid(args.grid_c),
        )
        reports.append(combine_reports(folds, name=f"xval-{args.group_by}"))
    _write(args, "xval", reports, fmt)
    return ExitCode.SUCCESS


def cli_report(args: Namespace) -> ExitCode:
    fmt = parse_format(args.format)
    manifest = DatasetManifest.load(args.manifest)
    conditions = load_conditions(args.conditions)
    kinds = parse_kinds(args.kinds)
    store = _store(args, manifest)
    store.prefetch(manifest.records, kinds)

    reports = []
    for condition in conditions:
        if not manifest.select(condition.train) or (condition.eval and not manifest.select(condition.eval)):
            logger.warning(f"Skipping condition {condition.name}: the dataset has no matching recordings")
            continue
        for kind in kinds:
            reports.append(
                run_condition(manifest, condition, kind, _hyperparams(args), store=store, seed=_seed(args))
            )
    if not reports:
        raise DataError(f"No condition in {args.conditions} matches the dataset")
    _write(args, "report", reports, fmt)
    return ExitCode.SUCCESS


COMMANDS = {
    "gen": cli_gen,
    "extract": cli_extract,
    "train": cli_train,
    "eval": cli_eval,
    "xval": cli_xval,
    "report": cli_report,
}


def run_command(args: Namespace) -> ExitCode:
    if args.config is not None:
        if not Path(args.config).is_file():
            raise UsageError(f"Config file {args.config} does not exist")
        set_config_file(args.config)
    return COMMANDS[args.command](args)
