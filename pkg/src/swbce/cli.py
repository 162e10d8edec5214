"""Command line entry point: ``swbce <subcommand> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 numerical abort.  Each invocation writes its outputs into one run
directory (``--out``, default ``$SWBCE_OUTPUT_ROOT/<subcommand>``) together
with ``run_manifest.json``; ``swbce replay <manifest>`` re-executes it.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from . import __version__, gradcheck
from .errors import InvalidSpec, SwbceError
from .image_io import read_binary, read_json, read_soft, write_csv, write_json, write_soft
from .losses import GradMode, LossConfig, Normalization, get_loss
from .metrics import EvalConfig, Matching, evaluate_dataset
from .net import TrainConfig, load_checkpoint, predict_dir, save_checkpoint, train, write_history
from .synth import SceneSpec, Texture, generate_split

OUTPUT_ROOT_ENV = "SWBCE_OUTPUT_ROOT"
MANIFEST_NAME = "run_manifest.json"
DEFAULT_B_GRID = (0.25, 0.5, 0.75, 0.9, 1.0, 1.1, 1.25, 1.5, 2.0)


def _size(text):
    parts = text.lower().split("x")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or HxW, got {text!r}") from None
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2:
        raise argparse.ArgumentTypeError(f"expected N or HxW, got {text!r}")
    return tuple(dims)


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _run_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / args.command


def _write_manifest(out: Path, args, config: dict, inputs: dict, outputs: list, started: float):
    write_json(
        {
            "tool": "swbce",
            "version": __version__,
            "subcommand": args.command,
            "argv": args.argv,
            "config": config,
            "inputs": inputs,
            "outputs": sorted(str(p) for p in outputs),
            "duration_seconds": round(time.perf_counter() - started, 3),
        },
        out / MANIFEST_NAME,
    )


def _loss_config(args, **overrides) -> LossConfig:
    fields = dict(
        lambda_label=args.lam,
        lambda_pred=args.lambda_pred,
        balance_b=args.b,
        grad_mode=args.grad_mode,
    )
    fields.update(overrides)
    return LossConfig(**fields)


# -- subcommands --------------------------------------------------------------


def cmd_loss(args, started):
    pred = read_soft(args.pred)
    gt = read_binary(args.gt)
    cfg = _loss_config(args, normalization=args.norm)
    res = get_loss(args.loss)(pred, gt, cfg)
    print(repr(res.value))

    out = _run_dir(args)
    outputs = ["loss.json"]
    config = {
        "loss": args.loss,
        "lambda_label": cfg.lambda_label,
        "lambda_pred": cfg.lambda_pred,
        "balance_b": cfg.balance_b,
        "clamp_eps": cfg.clamp_eps,
        "grad_mode": cfg.grad_mode.value,
        "normalization": cfg.normalization.value,
    }
    result = {"loss": args.loss, "value": res.value, "shape": list(pred.shape)}
    if args.grad_out:
        g = res.gradient
        lo, hi = float(g.min()), float(g.max())
        scale = hi - lo if hi > lo else 1.0
        grad_path = Path(args.grad_out)
        if not grad_path.is_absolute():
            grad_path = out / grad_path
        write_soft((g - lo) / scale, grad_path, maxval=65535)
        shown = os.path.relpath(grad_path, out) if grad_path.is_relative_to(out) else str(grad_path)
        # gradient = sample / 65535 * scale + offset
        result["gradient_pgm"] = {"path": shown, "offset": lo, "scale": scale}
        config["grad_out"] = shown
        outputs.append(shown)
    write_json(result, out / "loss.json")
    _write_manifest(out, args, config, {"pred": str(args.pred), "gt": str(args.gt)}, outputs, started)
    return 0


def cmd_gradcheck(args, started):
    rows = gradcheck.run(seed=args.seed, trials=args.trials, size=args.size, tol=args.tol, step=args.step)
    width = max(len(f"{r.loss}/{r.grad_mode}") for r in rows)
    print(f"{'case':<{width}}  trials  worst_rel_error  result")
    for r in rows:
        case = f"{r.loss}/{r.grad_mode}"
        print(f"{case:<{width}}  {r.trials:>6}  {r.worst_rel_error:15.3e}  {'PASS' if r.passed else 'FAIL'}")
    out = _run_dir(args)
    write_csv(
        ("loss", "grad_mode", "trials", "worst_rel_error", "result"),
        [(r.loss, r.grad_mode, r.trials, f"{r.worst_rel_error:.6e}", "pass" if r.passed else "fail") for r in rows],
        out / "gradcheck.csv",
    )
    config = {"seed": args.seed, "trials": args.trials, "size": args.size, "tol": args.tol, "step": args.step}
    _write_manifest(out, args, config, {}, ["gradcheck.csv"], started)
    return 0 if all(r.passed for r in rows) else 1


def cmd_gen_data(args, started):
    spec = SceneSpec(
        seed=args.seed,
        size=args.size,
        shape_count=args.shapes,
        noise_sigma=args.noise,
        texture=args.texture,
        texture_contrast=args.texture_contrast,
    )
    out = _run_dir(args)
    manifest = generate_split(spec, args.n_train, args.n_test, out, threads=args.threads)
    outputs = ["manifest.json"] + [e[k] for s in ("train", "test") for e in manifest[s] for k in ("image", "edges")]
    print(f"wrote {args.n_train} train + {args.n_test} test pairs to {out}")
    config = {"spec": spec.to_json(), "n_train": args.n_train, "n_test": args.n_test}
    _write_manifest(out, args, config, {}, outputs, started)
    return 0


def _train_config(args, loss=None, b=None) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        weight_decay=args.wd,
        epochs=args.epochs,
        batch_size=args.batch,
        crop=args.crop,
        seed=args.seed,
        loss=loss or args.loss,
        loss_config=_loss_config(args, **({} if b is None else {"balance_b": b})),
    )


def cmd_train(args, started):
    cfg = _train_config(args)
    out = _run_dir(args)
    resume = load_checkpoint(args.resume) if args.resume else None

    def report(epoch, loss):
        print(f"epoch {epoch:4d}  mean_loss {loss:.6f}", file=sys.stderr)

    ckpt = train(args.data, cfg, resume=resume, on_epoch=report)
    save_checkpoint(ckpt, out / "model.ckpt")
    write_history(ckpt, out / "history.csv")
    inputs = {"data": str(args.data), "resume": str(args.resume) if args.resume else None}
    _write_manifest(out, args, cfg.to_json(), inputs, ["model.ckpt", "history.csv"], started)
    return 0


def cmd_predict(args, started):
    ckpt = load_checkpoint(args.ckpt)
    out = _run_dir(args)
    written = predict_dir(ckpt, args.images, out)
    print(f"wrote {len(written)} predictions to {out}")
    inputs = {"ckpt": str(args.ckpt), "images": str(args.images)}
    _write_manifest(out, args, {}, inputs, [p.name for p in written], started)
    return 0


def _eval_config(args) -> EvalConfig:
    thresholds = tuple(k / (args.thresholds + 1) for k in range(1, args.thresholds + 1))
    if args.tol_ratio is not None:
        return EvalConfig(tolerance_ratio=args.tol_ratio, thresholds=thresholds, matching=args.matching)
    return EvalConfig(tolerance_px=args.tol_px, thresholds=thresholds, matching=args.matching)


def cmd_eval(args, started):
    cfg = _eval_config(args)
    report = evaluate_dataset(args.pred_dir, args.gt_dir, cfg, threads=args.threads)
    out = _run_dir(args)
    report.write(out)
    print(f"ods {report.ods:.6f}  ois {report.ois:.6f}  ap {report.ap:.6f}")
    inputs = {"pred_dir": str(args.pred_dir), "gt_dir": str(args.gt_dir)}
    _write_manifest(out, args, cfg.describe(), inputs, ["eval_report.json", "pr_curve.csv"], started)
    return 0


def cmd_sweep(args, started):
    eval_cfg = _eval_config(args)
    out = _run_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    data = Path(args.data)
    csv_path = out / "sweep.csv"
    outputs = ["sweep.csv"]
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("b,ods,ois,ap\n")
        fh.flush()
        for b in args.b_values:
            cfg = _train_config(args, loss="swbce", b=b)
            ckpt = train(data, cfg)
            sub = out / f"b_{b:g}"
            save_checkpoint(ckpt, sub / "model.ckpt")
            predict_dir(ckpt, data / "test" / "images", sub / "pred")
            report = evaluate_dataset(sub / "pred", data / "test" / "edges", eval_cfg, threads=args.threads)
            report.write(sub)
            fh.write(f"{b:g},{report.ods:.6f},{report.ois:.6f},{report.ap:.6f}\n")
            fh.flush()
            print(f"b={b:g}  ods {report.ods:.6f}  ois {report.ois:.6f}  ap {report.ap:.6f}", file=sys.stderr)
            outputs += [f"b_{b:g}/model.ckpt", f"b_{b:g}/eval_report.json", f"b_{b:g}/pr_curve.csv"]
    config = {
        "b_values": list(args.b_values),
        "train": _train_config(args, loss="swbce").to_json(),
        "eval": eval_cfg.describe(),
    }
    _write_manifest(out, args, config, {"data": str(args.data)}, outputs, started)
    return 0


def cmd_replay(args, started):
    manifest = read_json(args.manifest)
    argv = manifest.get("argv")
    if not isinstance(argv, list) or not argv:
        raise InvalidSpec(f"{args.manifest}: no argv recorded")
    return main(argv)


# -- parser -------------------------------------------------------------------


def _add_loss_options(p):
    p.add_argument("--b", type=float, default=1.0, help="balance between label and prediction terms")
    p.add_argument("--lambda", dest="lam", type=float, default=1.1, help="background weight factor (label term)")
    p.add_argument("--lambda-pred", type=float, default=1.1, help="background weight factor (prediction term)")
    p.add_argument("--grad-mode", choices=[m.value for m in GradMode], default=GradMode.DETACHED.value)


def _add_train_options(p):
    p.add_argument("--data", required=True, help="dataset directory containing manifest.json")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--wd", type=float, default=1e-8)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--crop", type=_size, default=None, help="random crop N or HxW (default: full image)")
    p.add_argument("--seed", type=int, default=0)


def _add_eval_options(p):
    tol = p.add_mutually_exclusive_group()
    tol.add_argument("--tol-px", type=float, default=1.0, help="match radius in pixels (default 1)")
    tol.add_argument("--tol-ratio", type=float, default=None, help="match radius as a fraction of the diagonal")
    p.add_argument("--matching", choices=[m.value for m in Matching], default=Matching.OPTIMAL.value)
    p.add_argument("--thresholds", type=int, default=99, help="number of evenly spaced thresholds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swbce", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"swbce {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", default=None, help="run directory")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker cap")
        return p

    p = add("loss", cmd_loss, "evaluate a loss on one prediction / ground-truth pair")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--loss", choices=["wbce", "swbce", "pred"], default="swbce")
    p.add_argument("--norm", choices=[n.value for n in Normalization], default=Normalization.PAPER_SUM.value)
    p.add_argument("--grad-out", default=None, help="write the gradient as a rescaled 16-bit PGM")
    _add_loss_options(p)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every loss gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1e-5)

    p = add("gen-data", cmd_gen_data, "write a synthetic train/test split")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n-train", type=int, default=20)
    p.add_argument("--n-test", type=int, default=7)
    p.add_argument("--size", type=_size, default=(64, 64))
    p.add_argument("--shapes", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--texture", choices=[t.value for t in Texture], default=Texture.STRIPES.value)
    p.add_argument("--texture-contrast", type=float, default=0.1)

    p = add("train", cmd_train, "train the toy network")
    _add_train_options(p)
    p.add_argument("--loss", choices=["wbce", "swbce", "pred"], default="swbce")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    _add_loss_options(p)

    p = add("predict", cmd_predict, "run a checkpoint over a directory of PGM images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--images", required=True)

    p = add("eval", cmd_eval, "ODS / OIS / AP of a prediction directory")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    _add_eval_options(p)

    p = add("sweep", cmd_sweep, "train and evaluate one model per balance value b")
    _add_train_options(p)
    p.add_argument("--b-values", type=_float_list, default=list(DEFAULT_B_GRID))
    p.add_argument("--lambda", dest="lam", type=float, default=1.1)
    p.add_argument("--lambda-pred", type=float, default=1.1)
    p.add_argument("--grad-mode", choices=[m.value for m in GradMode], default=GradMode.DETACHED.value)
    p.set_defaults(b=1.0)
    _add_eval_options(p)

    p = add("replay", cmd_replay, "re-run the command recorded in a run manifest")
    p.add_argument("manifest")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    started = time.perf_counter()
    try:
        return args.func(args, started)
    except SwbceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
