"""``miniasr`` command-line entry point."""

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import acoustic, decoder, lm, scoring
from .config import ExperimentConfig, load_config
from .corpus import (load_manifest, parse_transcriptions, validate_corpus)
from .errors import ConfigError, MiniAsrError
from .frontend import extract_features, read_feat_checked, read_wav, write_feat
from .toy import make_toy_corpus

log = logging.getLogger("miniasr")


# ---------------------------------------------------------------------------
# shared helpers


def _load_cfg(args):
    if getattr(args, "config", None):
        return load_config(args.config)
    return ExperimentConfig()


def _manifest(cfg):
    return load_manifest(cfg.path(cfg.etc_dir), cfg.db_name, wav_dir=cfg.path(cfg.wav_dir),
                         feat_dir=cfg.path(cfg.feat_dir), wav_extension=cfg.wavfile_extension)


def _extract_one(job):
    wav_path, feat_path, uid, frontend = job
    try:
        wave = read_wav(wav_path, expected_rate=frontend.sample_rate_hz, source_id=uid)
        fs = extract_features(wave, frontend)
        fs.utterance_id = uid
        write_feat(fs, feat_path)
        return None
    except (MiniAsrError, OSError) as exc:
        return f"{wav_path}: {exc}" if str(wav_path) not in str(exc) else str(exc)


def load_features(manifest, split, dim=39):
    ts = getattr(manifest, split)
    fids = ts.fileid_map()
    return {uid: read_feat_checked(manifest.feat_path(fids[uid]), dim, uid).frames for uid, _ in ts.utterances}


def _map(fn, jobs, items):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items, chunksize=8))
    return [fn(i) for i in items]


# ---------------------------------------------------------------------------
# features


def run_features(cfg, jobs=1, out=None):
    """Extract features for every fileid; returns the number of errors."""
    out = out or sys.stdout
    manifest = _manifest(cfg)
    if not Path(manifest.wav_dir).is_dir():
        print(f"error: wav directory {manifest.wav_dir} does not exist", file=out)
        return 1
    report = validate_corpus(manifest, check_audio=True)
    if report.errors:
        print(report.render(), file=out)
        return len(report.errors)
    jobs_list = []
    for split in ("train", "test"):
        ts = getattr(manifest, split)
        for (uid, _), fid in zip(ts.utterances, ts.fileids):
            jobs_list.append((manifest.wav_path(fid), manifest.feat_path(fid), uid, cfg.frontend))
    errors = [e for e in _map(_extract_one, jobs, jobs_list) if e]
    for e in errors:
        print(f"error: {e}", file=out)
    print(f"features: {len(jobs_list) - len(errors)} written to {manifest.feat_dir}, {len(errors)} errors", file=out)
    return len(errors)


def cmd_features(args):
    cfg = _load_cfg(args)
    return 1 if run_features(cfg, args.jobs) else 0


# ---------------------------------------------------------------------------
# language model


def parse_smoothing(spec, k=None, lambdas=None):
    """``laplace``, ``additive[:k]`` or ``interpolated[:l1,l2,l3]``."""
    name, _, arg = spec.partition(":")
    if name == "laplace":
        return lm.Smoothing.laplace()
    if name == "additive":
        kk = float(arg) if arg else (1.0 if k is None else k)
        return lm.Smoothing.additive(kk)
    if name == "interpolated":
        lam = [float(x) for x in arg.split(",")] if arg else lambdas
        if not lam:
            raise ValueError("interpolated smoothing needs lambdas")
        return lm.Smoothing.interpolated(*lam)
    raise ValueError(f"unknown smoothing {spec!r}")


def _read_sentences(path, rules):
    return lm.clean_text(Path(path).read_text(encoding="utf-8"), rules)


def build_lm(text_path, order, smoothing, out_prefix, rules=None, use_unk=False):
    sentences = _read_sentences(text_path, rules)
    counts = lm.count_ngrams(sentences, order)
    model = lm.estimate(counts, smoothing, use_unk=use_unk)
    out_prefix = Path(out_prefix)
    arpa = out_prefix.with_suffix(".arpa")
    lm.write_arpa(model, arpa)
    lm.write_binary(model, out_prefix.with_suffix(".lmb"))
    return model, sentences, arpa


def cmd_lm(args):
    cfg = _load_cfg(args)
    rules = lm.NormalizationRules.from_lexicon_file(args.numbers) if args.numbers else lm.NormalizationRules()
    lambdas = [float(x) for x in args.lambdas.split(",")] if args.lambdas else None
    try:
        smoothing = parse_smoothing(args.smoothing, args.k, lambdas)
        candidates = [parse_smoothing(c, args.k, lambdas) for c in args.candidate]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = Path(args.text) if args.text else cfg.lm_text_path
    out = Path(args.out) if args.out else cfg.lm_file.with_suffix("")
    order = args.order or cfg.lm_order
    model, sentences, arpa = build_lm(text, order, smoothing, out, rules, args.unk)
    res = lm.perplexity(model, sentences)
    print(f"lm: {arpa} order={order} smoothing={smoothing.describe()} V={model.V}")
    print(f"train perplexity: {res.perplexity:.4f} ({res.num_events} events)")
    for held in args.heldout:
        held_sents = _read_sentences(held, rules)
        rows = []
        counts = lm.count_ngrams(sentences, order)
        for sm in [smoothing] + candidates:
            cand = model if sm is smoothing else lm.estimate(counts, sm, use_unk=args.unk)
            rows.append((sm.describe(), lm.perplexity(cand, held_sents).perplexity))
        best = min(rows, key=lambda r: r[1])
        print(f"held-out perplexity on {held}:")
        for name, ppl in rows:
            print(f"  {name:<40} {ppl:12.4f}{'  <- lowest' if (name, ppl) == best else ''}")
    return 0


# ---------------------------------------------------------------------------
# training


def _stage_name(kind, m):
    return f"{kind.lower()}_{m}"


def train_stage(model, manifest, features, iterations, convergence_ratio, jobs, stage, log_rows):
    prev = None
    for it in range(1, iterations + 1):
        model, ll = acoustic.baum_welch_iteration(model, manifest, features, jobs=jobs)
        log_rows.append(f"{stage}\t{it}\t{ll:.6f}")
        log.info("%s iteration %d: log-likelihood %.4f", stage, it, ll)
        if prev is not None and abs(ll - prev) <= convergence_ratio * abs(prev):
            break
        prev = ll
    return model


def training_schedule(cfg, manifest, features, jobs=1, done=None, model_dir=None):
    """Yield ``(stage, model, log_rows)`` for every CI (and CD) mixture stage.

    Stages listed in ``done`` are loaded from ``model_dir`` instead of
    being retrained.
    """
    done = done or set()
    ci = None
    for m in cfg.mixture_schedule:
        names = [_stage_name("CI", m)] + ([_stage_name("CD", m)] if cfg.cd_enabled else [])
        if all(n in done for n in names):
            ci = acoustic.read_model(Path(model_dir) / f"{names[0]}.mam")
            for n in names:
                yield n, None, None
            continue
        rows = []
        if ci is None:
            ci = acoustic.flat_start(manifest, features, variance_floor=cfg.variance_floor)
        elif ci.num_mixtures < m:
            ci = acoustic.split_mixtures(ci, m)
        ci = train_stage(ci, manifest, features, cfg.iterations_per_stage, cfg.convergence_ratio,
                         jobs, names[0], rows)
        yield names[0], ci, rows
        if cfg.cd_enabled:
            rows = []
            cd = acoustic.build_cd_model(ci, manifest, cfg.cd_min_count)
            cd = train_stage(cd, manifest, features, cfg.iterations_per_stage, cfg.convergence_ratio,
                             jobs, names[1], rows)
            yield names[1], cd, rows


def cmd_train(args):
    cfg = _load_cfg(args)
    manifest = _manifest(cfg)
    features = load_features(manifest, "train", cfg.frontend.feature_dim)
    out = Path(args.out) if args.out else cfg.path(cfg.exp_dir) / "models"
    out.mkdir(parents=True, exist_ok=True)
    rows = ["stage\titeration\tlog_likelihood"]
    for stage, model, stage_rows in training_schedule(cfg, manifest, features, args.jobs):
        acoustic.write_model(model, out / f"{stage}.mam")
        rows.extend(stage_rows)
        print(f"train: {stage} -> {out / (stage + '.mam')}")
    (out / "train_log.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# decoding and scoring


def decode_to_file(cfg, manifest, model, lang_model, out_path):
    result = decoder.batch_decode(manifest, model, lang_model, cfg.decode)
    decoder.write_hypotheses(result.hypotheses, out_path)
    for uid, msg in result.failures.items():
        print(f"warning: {uid}: {msg}", file=sys.stderr)
    return result


def cmd_decode(args):
    cfg = _load_cfg(args)
    manifest = _manifest(cfg)
    model = acoustic.read_model(args.model)
    lang = _read_lm(args.lm or cfg.lm_file)
    out = Path(args.out) if args.out else cfg.path(cfg.exp_dir) / "hyp" / (Path(args.model).stem + ".hyp")
    result = decode_to_file(cfg, manifest, model, lang, out)
    print(f"decode: {len(result.hypotheses)} hypotheses -> {out}; {len(result.failures)} warnings")
    return 0


def _read_lm(path):
    path = Path(path)
    return lm.read_binary(path) if path.suffix == ".lmb" else lm.read_arpa(path)


def _read_transcripts(path):
    return parse_transcriptions(Path(path).read_text(encoding="utf-8"), source=str(path)).utterances


def score_files(ref_path, hyp_path, group_pattern=None):
    refs = _read_transcripts(ref_path)
    hyps = dict(_read_transcripts(hyp_path))
    return scoring.score_transcripts(refs, hyps, group_pattern)


def cmd_score(args):
    cfg = _load_cfg(args)
    pattern = args.group_pattern if args.group_pattern is not None else cfg.group_pattern
    report = score_files(args.ref, args.hyp, pattern or None)
    sys.stdout.write(report.render())
    if args.json:
        Path(args.json).write_text(report.to_json(), encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# full experiment


class Checkpoint:
    def __init__(self, path):
        self.path = Path(path)
        self.done = json.loads(self.path.read_text())["done"] if self.path.exists() else []

    def __contains__(self, stage):
        return stage in self.done

    def mark(self, stage):
        if stage not in self.done:
            self.done.append(stage)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps({"done": self.done}, indent=1) + "\n")


def render_summary(rows):
    head = f"{'Model':<6}{'Mixtures':>9}{'% Correct':>11}{'% Accuracy':>12}{'% SER':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['model']:<6}{r['mixtures']:>9}{r['percent_correct']:>11.2f}"
                     f"{r['percent_accuracy']:>12.2f}{r['percent_ser']:>8.2f}")
    return "\n".join(lines) + "\n"


def run_experiment(cfg, jobs=1, out=None):
    """features -> lm -> train -> decode -> score for every stage, resumable.

    Returns the summary rows.  Completed steps are recorded in
    ``<exp_dir>/checkpoint.json`` and skipped on the next run.
    """
    out = out or sys.stdout
    exp = cfg.path(cfg.exp_dir)
    ckpt = Checkpoint(exp / "checkpoint.json")
    if "features" not in ckpt:
        if run_features(cfg, jobs, out):
            raise MiniAsrError("feature extraction failed; fix the errors above and rerun to resume")
        ckpt.mark("features")
    if "lm" not in ckpt:
        sm = parse_smoothing(cfg.lm_smoothing, cfg.lm_k)
        build_lm(cfg.lm_text_path, cfg.lm_order, sm, cfg.lm_file.with_suffix(""))
        ckpt.mark("lm")
    manifest = _manifest(cfg)
    lang = lm.read_arpa(cfg.lm_file)
    features = load_features(manifest, "train", cfg.frontend.feature_dim)
    test_feats = load_features(manifest, "test", cfg.frontend.feature_dim)
    ref_path = cfg.path(cfg.etc_dir) / f"{cfg.db_name}_test.transcription"
    model_dir = exp / "models"
    model_dir.mkdir(parents=True, exist_ok=True)
    for stage, model, rows in training_schedule(cfg, manifest, features, jobs, set(ckpt.done), model_dir):
        if model is None:
            print(f"experiment: {stage} already complete, skipped", file=out)
            continue
        acoustic.write_model(model, model_dir / f"{stage}.mam")
        (exp / "logs").mkdir(parents=True, exist_ok=True)
        (exp / "logs" / f"{stage}.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
        graph = decoder.build_search_graph(manifest.dictionary, manifest.fillers, lang, model)
        result = decoder.batch_decode(manifest, model, lang, cfg.decode, graph=graph, features=test_feats)
        hyp_path = exp / "hyp" / f"{stage}.hyp"
        decoder.write_hypotheses(result.hypotheses, hyp_path)
        report = score_files(ref_path, hyp_path, cfg.group_pattern or None)
        (exp / "score").mkdir(parents=True, exist_ok=True)
        (exp / "score" / f"{stage}.txt").write_text(report.render(), encoding="utf-8")
        (exp / "score" / f"{stage}.json").write_text(report.to_json(), encoding="utf-8")
        print(f"experiment: {stage} accuracy {report.percent_accuracy:.2f}% "
              f"({len(result.failures)} decode failures)", file=out)
        ckpt.mark(stage)
    rows = []
    for kind in ("CI", "CD") if cfg.cd_enabled else ("CI",):
        for m in cfg.mixture_schedule:
            stage = _stage_name(kind, m)
            report = score_files(ref_path, exp / "hyp" / f"{stage}.hyp", cfg.group_pattern or None)
            rows.append({"model": kind, "mixtures": m, "percent_correct": report.percent_correct,
                         "percent_accuracy": report.percent_accuracy, "percent_ser": report.percent_ser})
    (exp / "summary.txt").write_text(render_summary(rows), encoding="utf-8")
    (exp / "summary.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    log_rows = ["stage\titeration\tlog_likelihood"]
    for kind in ("ci", "cd") if cfg.cd_enabled else ("ci",):
        for m in cfg.mixture_schedule:
            log_rows.extend((exp / "logs" / f"{kind}_{m}.tsv").read_text().splitlines())
    (exp / "train_log.tsv").write_text("\n".join(log_rows) + "\n", encoding="utf-8")
    out.write(render_summary(rows))
    return rows


def cmd_experiment(args):
    cfg = _load_cfg(args)
    try:
        run_experiment(cfg, args.jobs)
    except MiniAsrError as exc:
        print(f"error: {exc}\nexperiment aborted; completed stages are checkpointed, rerun to resume",
              file=sys.stderr)
        return 1
    return 0


TOY_CONFIG = """\
# synthetic toy corpus
db_name = {name}
etc_dir = etc
wav_dir = wav
feat_dir = feat
exp_dir = exp
wavfile_srate = 16000.0
hmm_type = .cont.
mixture_schedule = 1,2,4,8
cd_enabled = true
cd_min_count = 3
iterations_per_stage = {iterations}
lm_order = 3
lm_smoothing = laplace
"""


def cmd_make_toy_corpus(args):
    corpus = make_toy_corpus(args.out, seed=args.seed, num_train=args.num_train, num_test=args.num_test)
    cfg_path = Path(args.out) / f"{corpus.name}.cfg"
    cfg_path.write_text(TOY_CONFIG.format(name=corpus.name, iterations=args.iterations), encoding="utf-8")
    print(f"toy corpus: {args.num_train} train / {args.num_test} test utterances in {args.out}; config {cfg_path}")
    return 0


# ---------------------------------------------------------------------------


def _global_flags(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="key=value experiment config file")
    p.add_argument("--jobs", type=int, default=d(1), help="worker processes")
    p.add_argument("--seed", type=int, default=d(0), help="random seed (toy corpus generation)")
    p.add_argument("--verbose", "-v", action="count", default=d(0))


def build_parser():
    parser = argparse.ArgumentParser(prog="miniasr", description="Small HMM-GMM speech recognition toolkit")
    _global_flags(parser, False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        _global_flags(p, True)
        p.set_defaults(func=fn)
        return p

    add("features", cmd_features, "extract MFCC feature files")
    p = add("lm", cmd_lm, "build an n-gram language model")
    p.add_argument("--text", help="training text (default: lm_text from config)")
    p.add_argument("--order", type=int, choices=(1, 2, 3))
    p.add_argument("--smoothing", default="laplace", help="laplace | additive[:k] | interpolated[:l1,l2,l3]")
    p.add_argument("--k", type=float, help="additive constant (> 0)")
    p.add_argument("--lambdas", help="interpolation weights, lowest order first")
    p.add_argument("--candidate", action="append", default=[], help="extra smoothing to compare on held-out text")
    p.add_argument("--heldout", action="append", default=[], help="held-out text for perplexity")
    p.add_argument("--numbers", help="number lexicon file (DIGITS WORD...)")
    p.add_argument("--unk", action="store_true", help="add <UNK> to the vocabulary")
    p.add_argument("--out", help="output prefix; writes PREFIX.arpa and PREFIX.lmb")
    p = add("train", cmd_train, "train CI/CD models for every mixture stage")
    p.add_argument("--out", help="model directory")
    p = add("decode", cmd_decode, "decode the test set")
    p.add_argument("--model", required=True)
    p.add_argument("--lm")
    p.add_argument("--out")
    p = add("score", cmd_score, "score a hypothesis file")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--group-pattern", help="regex whose first group names the speaker")
    p.add_argument("--json", help="write the machine-readable summary here")
    add("experiment", cmd_experiment, "run the full pipeline with checkpoints")
    p = add("make-toy-corpus", cmd_make_toy_corpus, "write the synthetic toy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--num-train", type=int, default=320)
    p.add_argument("--num-test", type=int, default=50)
    p.add_argument("--iterations", type=int, default=4, help="iterations_per_stage in the written config")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MiniAsrError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
