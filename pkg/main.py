import argparse
import json
import sys
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from loguru import logger

from config import ABLATIONS, SECTION_KINDS, RunConfig, get_jobs, get_log_level, get_seed, run_config_from
from corpus import AgeKind, Document, load_documents
from crf_tagger import CrfConfig, CrfModel, load_crf, save_crf, train_crf
from ctgov_supervision import (
    QA_FILE,
    SENTFINDER_FILE,
    SentFinderQuotas,
    bio_file,
    build_datasets,
    load_records,
    read_bio_sequences,
    read_qa_pairs,
    read_sentence_examples,
)
from errors import AgeExtractionError
from evalkit import (
    corpus_stats,
    format_ablation_table,
    format_metrics_table,
    format_stats,
    load_gold,
    metrics_to_dict,
    score_corpus,
)
from exporter import ExcelReportExporter
from maxent_sentfinder import MaxEntConfig, load_maxent, save_maxent, train_maxent
from passage_baseline import ProximityConfig, load_patterns
from pipeline import (
    ArticlePrediction,
    crf_prediction,
    load_cues,
    map_documents,
    passage_prediction,
    read_predictions,
    run_pipeline,
    write_predictions,
)
from qa_scorer import load_qa, save_qa, train_qa

SENTFINDER_MODEL = "sentfinder.model"
QA_MODEL = "qa.model"


def crf_model_file(kind: AgeKind) -> str:
    return f"crf_{kind.value}.model"

# --------------------------- Commands ---------------------------

def cmd_build_data(args) -> None:
    records = load_records(args.registry)
    negatives = load_documents(args.negatives) if args.negatives else None
    quotas = SentFinderQuotas(min=args.min_quota, max=args.max_quota, negative=args.negative_quota)
    build_datasets(records, args.out, negatives, quotas, args.bio_quota, args.qa_quota,
                   seed=args.seed, dedup=not args.no_dedup, qa_context=args.qa_context)
    print(f"Datasets written to {args.out}")


def train_config(args) -> Union[MaxEntConfig, CrfConfig]:
    """Trainer settings; flags left unset fall back to the component defaults."""
    cls = CrfConfig if args.component == "crf" else MaxEntConfig
    overrides = {"l2": args.l2, "max_iter": args.max_iter}
    return cls(seed=args.seed, **{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args) -> None:
    data, models = Path(args.data), Path(args.models)
    config = train_config(args)
    if args.component == "sentfinder":
        save_maxent(train_maxent(read_sentence_examples(data / SENTFINDER_FILE), config), models / SENTFINDER_MODEL)
    elif args.component == "qa":
        save_qa(train_qa(read_qa_pairs(data / QA_FILE), config), models / QA_MODEL)
    else:
        for kind in AgeKind:
            model = train_crf(read_bio_sequences(data / bio_file(kind)), kind, config)
            save_crf(model, models / crf_model_file(kind))
    print(f"Trained {args.component}; models in {models}")


def _run_config(args) -> RunConfig:
    return run_config_from({
        "seed": args.seed,
        "confidence_threshold": args.threshold,
        "sections": args.sections,
        "cues_path": args.cues,
        "ablations": getattr(args, "ablate", None),
        "filter_stage": args.filter_stage,
        "jobs": args.jobs,
    })


def _extract(docs: Sequence[Document], models: Path, config: RunConfig) -> List[ArticlePrediction]:
    sentmodel = None if config.has_ablation("no_sentfinder") else load_maxent(models / SENTFINDER_MODEL)
    qamodel = None if config.has_ablation("no_qa") else load_qa(models / QA_MODEL)
    fn = partial(run_pipeline, sentmodel=sentmodel, qamodel=qamodel, cues=load_cues(config.cues_path), config=config)
    return map_documents(fn, docs, config.jobs, desc="extract")


def cmd_extract(args) -> None:
    config = _run_config(args)
    preds = _extract(load_documents(args.docs), Path(args.models), config)
    write_predictions(args.out, preds)
    print(f"Saved: {args.out}")


def cmd_baseline(args) -> None:
    docs = load_documents(args.docs)
    if args.method == "passage":
        config = run_config_from({"seed": args.seed, "patterns_path": args.patterns, "jobs": args.jobs})
        cfg = ProximityConfig(sigma=args.sigma)
        fn = partial(passage_prediction, patterns=load_patterns(config.patterns_path), cfg=cfg)
    else:
        if not args.models:
            raise AgeExtractionError("baseline crf needs --models")
        models: Dict[str, CrfModel] = {k.value: load_crf(Path(args.models) / crf_model_file(k)) for k in AgeKind}
        fn = partial(crf_prediction, models=models)
    write_predictions(args.out, map_documents(fn, docs, args.jobs, desc=args.method))
    print(f"Saved: {args.out}")


def cmd_evaluate(args) -> None:
    preds = read_predictions(args.pred)
    golds = load_gold(args.gold)
    metrics = score_corpus(preds, golds)
    print(format_metrics_table(metrics))
    if args.json:
        Path(args.json).write_text(json.dumps(metrics_to_dict(metrics), indent=2) + "\n", encoding="utf-8")
    if args.xlsx:
        saved = ExcelReportExporter(out_path=args.xlsx).export(preds, golds, metrics)
        print(f"Saved: {saved}")


def cmd_stats(args) -> None:
    print(format_stats(corpus_stats(load_documents(args.docs))))


def cmd_ablate(args) -> None:
    docs = load_documents(args.docs)
    golds = load_gold(args.gold)
    base = _run_config(args)
    rows = []
    for name, ablations in [("full system", [])] + [(f"w/o {a[3:]}", [a]) for a in ABLATIONS]:
        config = base.model_copy(update={"ablations": ablations})
        preds = _extract(docs, Path(args.models), config)
        if args.out_dir:
            write_predictions(Path(args.out_dir) / f"{ablations[0] if ablations else 'full'}.jsonl", preds)
        rows.append((name, score_corpus(preds, golds)))
    print(format_ablation_table(rows))

# --------------------------- Parser ---------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--docs", required=True, help="document file or directory")
    p.add_argument("--models", required=True, help="directory holding trained models")
    p.add_argument("--threshold", type=float, help="confidence threshold (default 0.5)")
    p.add_argument("--sections", nargs="+", choices=SECTION_KINDS, help="sections to read answers from")
    p.add_argument("--cues", help="speculation cue list")
    p.add_argument("--filter-stage", choices=("before", "after"), help="speculation filter before/after aggregation")
    p.add_argument("--jobs", type=int, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agex", description="Extract participant min/max ages from trial articles.")
    parser.add_argument("--log-level", default=get_log_level(), help="loguru level (default from AGEX_LOG_LEVEL)")
    parser.add_argument("--seed", type=int, default=get_seed(), help="random seed (default from AGEX_SEED)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-data", help="registry records -> distant-supervision datasets")
    p.add_argument("--registry", required=True, help="registry records (JSONL)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--negatives", help="documents supplying negative sentences")
    p.add_argument("--min-quota", type=int, default=10_000)
    p.add_argument("--max-quota", type=int, default=10_000)
    p.add_argument("--negative-quota", type=int, default=20_000)
    p.add_argument("--bio-quota", type=int, default=10_000)
    p.add_argument("--qa-quota", type=int, default=10_000)
    p.add_argument("--qa-context", choices=("clause", "criteria"), default="clause")
    p.add_argument("--no-dedup", action="store_true", help="keep records with identical criteria text")
    p.set_defaults(func=cmd_build_data)

    p = sub.add_parser("train", help="train one component")
    p.add_argument("component", choices=("sentfinder", "crf", "qa"))
    p.add_argument("--data", required=True, help="dataset directory written by build-data")
    p.add_argument("--models", required=True, help="model output directory")
    p.add_argument("--l2", type=float, help="L2 regularization strength (default 1.0)")
    p.add_argument("--max-iter", type=int, help="iteration cap")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="run the QA extraction pipeline")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="predictions output (JSONL)")
    p.add_argument("--ablate", nargs="+", choices=ABLATIONS, help="switch off pipeline components")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("baseline", help="run a baseline extractor")
    p.add_argument("method", choices=("passage", "crf"))
    p.add_argument("--docs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--models", help="directory holding crf_min.model / crf_max.model")
    p.add_argument("--patterns", help="pattern table (default data/age_patterns.tsv)")
    p.add_argument("--sigma", type=float, default=1.0, help="proximity kernel width")
    p.add_argument("--jobs", type=int, default=get_jobs(), help="worker processes (default from AGEX_JOBS)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="score predictions against gold annotations")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True, help="CSV with doc_id,min_age,max_age")
    p.add_argument("--json", help="also write metrics as JSON")
    p.add_argument("--xlsx", help="also write an Excel report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("--docs", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("ablate", help="score the full system and each ablation")
    _add_run_flags(p)
    p.add_argument("--gold", required=True)
    p.add_argument("--out-dir", help="keep each system's predictions here")
    p.set_defaults(func=cmd_ablate)
    return parser


def configure_logging(level: str) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format="<level>{level: <8}</level> {message}")


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; 0 on success, 1 on runtime errors, 2 on usage errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    configure_logging(args.log_level)
    try:
        args.func(args)
    except (AgeExtractionError, OSError, ValueError) as e:
        logger.error("{}: {}", args.command, e)
        return 1
    return 0


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
