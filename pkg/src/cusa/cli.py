"""Command-line entry point.

Subcommands: synth, train, eval, gradcheck, inspect. Every command
prints one JSON report to stdout with stable, sorted fields; given
identical flags and inputs the bytes are identical run to run. Wall
time goes to stderr so it never perturbs the report.

Exit codes: 0 success, 2 usage, 3 I/O or file format, 4 data
inconsistency, 5 numeric failure, 6 gradient check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict

from . import dataio, gradcheck, metrics, model, synthetic, trainer
from .errors import (
    DataError,
    FormatError,
    InvalidConfig,
    MissingFeature,
    NumericError,
    OutOfRange,
    UsageError,
)
from .losses import batch_loss_and_grads
from .mathops import l2_normalize_rows, row_softmax
from .softlabels import TeacherBatch, build_batch_targets

FORMAT_VERSION = 1


def _print_report(command: str, config: dict, seed: int, payload: dict) -> None:
    report = {
        "command": command,
        "config": config,
        "seed": seed,
        "payload": payload,
        "format_version": FORMAT_VERSION,
    }
    sys.stdout.write(json.dumps(report, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    config = synthetic.SynthConfig(
        n_clusters=args.clusters,
        pairs_per_cluster=args.pairs_per_cluster,
        d_student_img=args.d_student_img,
        d_student_txt=args.d_student_txt,
        d_teacher_img=args.d_teacher_img,
        d_teacher_txt=args.d_teacher_txt,
        intra_noise=args.noise,
        cross_modal_gap=args.gap,
        seed=args.seed,
    )
    paths = synthetic.synth_generate(config, args.out)
    payload = {
        "files": paths,
        "n_pairs": config.n_clusters * config.pairs_per_cluster,
    }
    _print_report("synth", asdict(config), args.seed, payload)
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _load_train_data(args) -> trainer.TrainData:
    img_base = dataio.read_features(args.img_base)
    txt_base = dataio.read_features(args.txt_base)
    img_teacher = dataio.read_features(args.img_teacher)
    txt_teacher = dataio.read_features(args.txt_teacher)
    pairs = dataio.read_pairs(args.pairs, img_ids=img_base, txt_ids=txt_base)
    for img, txt in pairs:
        if img not in img_teacher:
            raise MissingFeature(f"image id {img!r} missing from teacher features")
        if txt not in txt_teacher:
            raise MissingFeature(f"text id {txt!r} missing from teacher features")
    return trainer.TrainData(pairs=pairs, img_base=img_base, txt_base=txt_base,
                             img_teacher=img_teacher, txt_teacher=txt_teacher)


def cmd_train(args) -> int:
    config = trainer.TrainConfig(
        alpha=args.alpha,
        beta=args.beta,
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        teacher_inv_temp=args.teacher_inv_temp,
        separate_uni_temp=args.separate_uni_temp,
        weight_decay=args.weight_decay,
        d_e=args.d_e,
        d_u=args.d_u,
    )
    data = _load_train_data(args)
    params, log = trainer.train(data, config)
    dataio.save_checkpoint(args.out_ckpt, params, config.to_dict())
    log.write(args.log)
    payload = {
        "checkpoint": args.out_ckpt,
        "log": args.log,
        "n_steps": len(log.records),
        "final": log.records[-1] if log.records else None,
    }
    _print_report("train", config.to_dict(), args.seed, payload)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _read_embeddings(path):
    """Feature file holding already-embedded vectors; rows re-normalized
    in float64 to absorb the 32-bit storage rounding."""
    table = dataio.read_features(path)
    return table.ids, l2_normalize_rows(table.features)


def _embed_side(ckpt_params, base_path, embed_fn, usa_branch: bool):
    table = dataio.read_features(base_path)
    return table.ids, embed_fn(table.features, ckpt_params, usa_branch=usa_branch)


def _eval_inputs(args, need_img: bool, need_txt: bool):
    """Resolve (img_ids, img_emb, txt_ids, txt_emb) from either direct
    embedding files or a checkpoint plus base features."""
    direct = [p for p in (args.img_emb, args.txt_emb) if p is not None]
    if args.ckpt is not None:
        if direct:
            raise InvalidConfig("pass either --ckpt or --img-emb/--txt-emb, not both")
        params, _ = dataio.load_checkpoint(args.ckpt)
        img = txt = (None, None)
        if need_img:
            if args.img_base is None:
                raise InvalidConfig("--ckpt evaluation needs --img-base")
            img = _embed_side(params, args.img_base, model.embed_images, args.usa_branch)
        if need_txt:
            if args.txt_base is None:
                raise InvalidConfig("--ckpt evaluation needs --txt-base")
            txt = _embed_side(params, args.txt_base, model.embed_texts, args.usa_branch)
        return img + txt
    if args.usa_branch:
        raise InvalidConfig("--usa-branch requires --ckpt (embeddings are computed)")
    img = txt = (None, None)
    if need_img:
        if args.img_emb is None:
            raise InvalidConfig("task needs --img-emb (or --ckpt with --img-base)")
        img = _read_embeddings(args.img_emb)
    if need_txt:
        if args.txt_emb is None:
            raise InvalidConfig("task needs --txt-emb (or --ckpt with --txt-base)")
        txt = _read_embeddings(args.txt_emb)
    return img + txt


def _relevance_from_pairs(pairs):
    rel_i2t: dict = {}
    rel_t2i: dict = {}
    for img, txt in pairs:
        rel_i2t.setdefault(img, set()).add(txt)
        rel_t2i.setdefault(txt, set()).add(img)
    return rel_i2t, rel_t2i


def _eval_config(args) -> dict:
    keys = ("task", "ckpt", "img_emb", "txt_emb", "img_base", "txt_base",
            "pairs", "relevance", "usa_branch")
    return {k: getattr(args, k) for k in keys}


def cmd_eval(args) -> int:
    task = args.task
    if task == "cross":
        if (args.pairs is None) == (args.relevance is None):
            raise InvalidConfig("task cross needs exactly one of --pairs / --relevance")
        img_ids, img_emb, txt_ids, txt_emb = _eval_inputs(args, True, True)
        if args.pairs is not None:
            pairs = dataio.read_pairs(args.pairs, img_ids=set(img_ids), txt_ids=set(txt_ids))
            rel_i2t, rel_t2i = _relevance_from_pairs(pairs)
        else:
            rel = dataio.read_relevance(args.relevance, known_ids=set(img_ids) | set(txt_ids))
            rel_i2t = rel_t2i = rel
        payload = metrics.evaluate_cross_modal(img_emb, txt_emb, img_ids, txt_ids,
                                               rel_i2t, rel_t2i)
    elif task == "img":
        if args.relevance is None:
            raise InvalidConfig("task img needs --relevance")
        img_ids, img_emb, _, _ = _eval_inputs(args, True, False)
        rel = dataio.read_relevance(args.relevance)
        payload = metrics.evaluate_uni_modal(img_emb, img_ids, rel)
    elif task == "sts":
        if args.pairs is None:
            raise InvalidConfig("task sts needs --pairs (id_a, id_b, score)")
        _, _, txt_ids, txt_emb = _eval_inputs(args, False, True)
        index = {tid: i for i, tid in enumerate(txt_ids)}
        triples = dataio.read_scored_pairs(args.pairs, ids=index)
        pred = [float(txt_emb[index[a]] @ txt_emb[index[b]]) for a, b, _ in triples]
        gold = [score for _, _, score in triples]
        payload = {"spearman": metrics.spearman(pred, gold), "n_pairs": len(triples)}
    else:  # argparse choices make this unreachable
        raise InvalidConfig(f"unknown task {task!r}")
    _print_report("eval", _eval_config(args), 0, payload)
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def _parse_dims(raw: str):
    parts = raw.split(",")
    if len(parts) != 4:
        raise InvalidConfig(f"--dims needs 4 comma-separated integers, got {raw!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise InvalidConfig(f"--dims needs integers, got {raw!r}") from None
    if any(d < 1 for d in dims):
        raise InvalidConfig(f"--dims entries must be >= 1, got {raw!r}")
    return dims


def cmd_gradcheck(args) -> int:
    dims = _parse_dims(args.dims)
    errors = gradcheck.run(trials=args.trials, base_seed=args.seed, dims=dims)
    failed = gradcheck.failed_components(errors)
    payload = {
        "max_errors": errors,
        "tolerance": gradcheck.TOLERANCE,
        "passed": not failed,
    }
    config = {"seed": args.seed, "trials": args.trials, "dims": list(dims)}
    _print_report("gradcheck", config, args.seed, payload)
    if failed:
        sys.stderr.write("gradcheck failed: " + ", ".join(failed) + "\n")
        return 6
    return 0


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------

def _parse_batch(raw: str, n_pairs: int):
    try:
        indices = [int(p) for p in raw.split(",")]
    except ValueError:
        raise InvalidConfig(f"--batch needs comma-separated integers, got {raw!r}") from None
    for i in indices:
        if not (0 <= i < n_pairs):
            raise OutOfRange(f"pair index {i} outside [0, {n_pairs})")
    if len(indices) < 2:
        raise InvalidConfig("--batch needs at least 2 indices")
    return indices


def _vectors(ids, emb) -> list:
    return [{"id": i, "vector": [float(v) for v in row]} for i, row in zip(ids, emb)]


def cmd_inspect(args) -> int:
    data = _load_train_data(args)
    indices = _parse_batch(args.batch, len(data.pairs))
    batch = [data.pairs[i] for i in indices]
    img_ids = [img for img, _ in batch]
    txt_ids = [txt for _, txt in batch]

    if args.ckpt is not None:
        params, _ = dataio.load_checkpoint(args.ckpt)
    else:
        params = model.init_params(args.seed, data.img_base.d, data.txt_base.d,
                                   args.d_e, args.d_u)

    outputs = model.forward(data.img_base.take(img_ids), data.txt_base.take(txt_ids), params)
    teacher = TeacherBatch(
        image_features=l2_normalize_rows(data.img_teacher.take(img_ids)),
        text_features=l2_normalize_rows(data.txt_teacher.take(txt_ids)),
    )
    targets = build_batch_targets(teacher, args.teacher_inv_temp)
    report, _ = batch_loss_and_grads(outputs, targets, args.alpha, args.beta)

    s_i2t = outputs.img_emb @ outputs.txt_emb.T
    it, it_u = outputs.inv_temp, outputs.inv_temp_uni
    payload = {
        "batch": indices,
        "p_i2i": targets.p_i2i.tolist(),
        "p_t2t": targets.p_t2t.tolist(),
        "q_i2t": row_softmax(s_i2t, it).tolist(),
        "q_t2i": row_softmax(s_i2t.T, it).tolist(),
        "q_i2i": row_softmax(outputs.img_usa @ outputs.img_usa.T, it_u).tolist(),
        "q_t2t": row_softmax(outputs.txt_usa @ outputs.txt_usa.T, it_u).tolist(),
        "loss": report.as_dict(),
        "embeddings": {
            "images": _vectors(img_ids, outputs.img_emb),
            "texts": _vectors(txt_ids, outputs.txt_emb),
        },
    }
    config = {"alpha": args.alpha, "beta": args.beta,
              "teacher_inv_temp": args.teacher_inv_temp, "ckpt": args.ckpt}
    _print_report("inspect", config, args.seed, payload)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_train_files(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pairs", required=True, help="image/text pair file")
    p.add_argument("--img-base", required=True, help="student image features")
    p.add_argument("--txt-base", required=True, help="student text features")
    p.add_argument("--img-teacher", required=True, help="teacher image features")
    p.add_argument("--txt-teacher", required=True, help="teacher text features")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cusa",
                                     description="soft-label alignment toolkit")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a clustered synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--pairs-per-cluster", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.15, help="intra-cluster noise scale")
    p.add_argument("--gap", type=float, default=0.1,
                   help="fraction of pair noise private to each modality")
    p.add_argument("--d-student-img", type=int, default=32)
    p.add_argument("--d-student-txt", type=int, default=32)
    p.add_argument("--d-teacher-img", type=int, default=64)
    p.add_argument("--d-teacher-txt", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the projection student")
    _add_train_files(p)
    p.add_argument("--out-ckpt", required=True, help="checkpoint output path")
    p.add_argument("--log", required=True, help="step log output path")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--teacher-inv-temp", type=float, default=1.0)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--d-e", type=int, default=32, help="retrieval embedding width")
    p.add_argument("--d-u", type=int, default=16, help="projector head width")
    p.add_argument("--separate-uni-temp", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate retrieval or similarity metrics")
    p.add_argument("--task", required=True, choices=("cross", "img", "sts"))
    p.add_argument("--ckpt", help="checkpoint; embeds --img-base/--txt-base")
    p.add_argument("--img-emb", help="precomputed image embeddings")
    p.add_argument("--txt-emb", help="precomputed text embeddings")
    p.add_argument("--img-base", help="student image features (with --ckpt)")
    p.add_argument("--txt-base", help="student text features (with --ckpt)")
    p.add_argument("--pairs", help="pair file (cross) or scored pairs (sts)")
    p.add_argument("--relevance", help="multi-positive relevance file")
    p.add_argument("--usa-branch", action="store_true",
                   help="evaluate the projector-head embeddings")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--dims", default="6,6,4,3",
                   help="d_base_img,d_base_txt,d_e,d_u")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="dump P/Q matrices and losses for one batch")
    _add_train_files(p)
    p.add_argument("--batch", required=True, help="comma-separated pair indices")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--teacher-inv-temp", type=float, default=1.0)
    p.add_argument("--ckpt", help="checkpoint to inspect (default: fresh init)")
    p.add_argument("--seed", type=int, default=0, help="init seed when no --ckpt")
    p.add_argument("--d-e", type=int, default=32)
    p.add_argument("--d-u", type=int, default=16)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    start = time.perf_counter()
    try:
        code = args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except FormatError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 3
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 3
    except DataError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 4
    except NumericError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 5
    sys.stderr.write(f"wall_time_s={time.perf_counter() - start:.3f}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
