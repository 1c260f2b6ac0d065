"""Command line entry point: ``advaug {train,eval,attack,gradcheck}``.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset, gradcheck
from .attack import AttackConfig, fgsm
from .core_math import ConfigError
from .losses import DataError
from .network import CheckpointError, ModelConfig, load_checkpoint, predict, save_checkpoint
from .training import TrainConfig, TrainingError, evaluate, train

log = logging.getLogger("advaug")

# flag name -> (TrainConfig field, type); also the keys accepted in --config files
TRAIN_KEYS = {
    "mode": ("mode", str),
    "seed": ("seed", int),
    "epochs": ("epochs", int),
    "batch-size": ("batch_size", int),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "train-epsilon": ("train_epsilon", float),
    "eval-epsilon": ("eval_epsilon", float),
    "lr": ("lr", float),
    "disc-updates": ("disc_updates", int),
}
DATA_KEYS = {
    "mnist-dir": ("mnist_dir", str),
    "synthetic": ("synthetic", int),
    "validation-count": ("validation_count", int),
    "out": ("out", str),
}


class UsageError(Exception):
    pass


def _truthy(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {value!r}")


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("_", "-")] = v
    return out


def _merged_settings(args) -> dict:
    """Defaults < config file < command-line flags."""
    file_values = read_config_file(args.config) if args.config else {}
    known = set(TRAIN_KEYS) | set(DATA_KEYS) | {"no-clip"}
    unknown = set(file_values) - known
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    merged = {}
    for key, (attr, typ) in {**TRAIN_KEYS, **DATA_KEYS}.items():
        flag = getattr(args, attr)
        if flag is not None:
            merged[attr] = flag
        elif key in file_values:
            try:
                merged[attr] = typ(file_values[key])
            except ValueError:
                raise UsageError(f"config key {key}: cannot parse {file_values[key]!r}") from None
    clip = True
    if "no-clip" in file_values:
        clip = not _truthy(file_values["no-clip"])
    if args.no_clip:
        clip = False
    merged["clip"] = clip
    return merged


def _load_data(settings: dict, split: str):
    """``(dataset, model_config)`` for MNIST or the synthetic fixture."""
    if settings.get("synthetic"):
        n = settings["synthetic"]
        seed = 0 if split == "train" else 1
        data = dataset.make_synthetic(dataset.SyntheticSpec(n_per_class=n, seed=seed))
        data.name = split
        return data, ModelConfig(num_classes=2)
    if not settings.get("mnist_dir"):
        raise UsageError("one of --mnist-dir or --synthetic is required")
    split_file = "test" if split == "test" else "train"
    data = dataset.load_mnist(settings["mnist_dir"], split_file)
    return data, ModelConfig()


def cmd_train(args) -> int:
    s = _merged_settings(args)
    if not s.get("out"):
        raise UsageError("--out is required")
    tcfg = TrainConfig(clip=s["clip"], **{a: s[a] for _, (a, _) in TRAIN_KEYS.items() if a in s})
    full, mcfg = _load_data(s, "train")
    test, _ = _load_data(s, "test")
    val_count = s.get("validation_count", 10000 if not s.get("synthetic") else len(full) // 6)
    train_data, val_data = dataset.split_train_validation(full, val_count)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    params, history = train(tcfg, mcfg, train_data, val_data)
    real_acc, adv_acc, _, _ = evaluate(params, test, tcfg.eval_epsilon, tcfg.clip)
    wall = time.perf_counter() - t0

    metrics_path, ckpt_path = out / "metrics.csv", out / "model.ckpt"
    history.to_csv(metrics_path)
    save_checkpoint(params, ckpt_path)
    report = {
        "mode": tcfg.mode,
        "seed": tcfg.seed,
        "config": {
            "train": tcfg.to_dict(),
            "model": mcfg.to_dict(),
            "data": {
                "mnist_dir": s.get("mnist_dir"),
                "synthetic": s.get("synthetic"),
                "validation_count": val_count,
            },
        },
        "test": {"epsilon": tcfg.eval_epsilon, "real_acc": real_acc, "adv_acc": adv_acc},
        "metrics_path": str(metrics_path),
        "checkpoint_path": str(ckpt_path),
        "wall_seconds": wall,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(f"{tcfg.mode}: test real {real_acc:.4f}  adversarial {adv_acc:.4f} "
          f"(eps={tcfg.eval_epsilon})  {wall:.0f}s")
    return 0


def _eval_settings(args) -> dict:
    s = {"mnist_dir": args.mnist_dir, "synthetic": args.synthetic}
    if not (args.mnist_dir or args.synthetic):
        raise UsageError("one of --mnist-dir or --synthetic is required")
    return s


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    data, _ = _load_data(_eval_settings(args), args.split)
    data.check(params.config.num_classes, params.config.input_dim)
    if args.epsilons:
        try:
            eps_list = [float(e) for e in args.epsilons.split(",")]
        except ValueError:
            raise UsageError(f"--epsilons: cannot parse {args.epsilons!r}") from None
    else:
        eps_list = [args.eval_epsilon]
    rows = []
    for eps in eps_list:
        AttackConfig(eps)  # validates
        real, adv, d_real, d_adv = evaluate(params, data, eps, not args.no_clip)
        row = {"epsilon": eps, "real_acc": real, "adv_acc": adv,
               "disc_acc_real": d_real, "disc_acc_adv": d_adv}
        rows.append(row)
        print(json.dumps(row))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        fragment = {"checkpoint": str(args.checkpoint), "split": args.split, "results": rows}
        (out / "eval.json").write_text(json.dumps(fragment, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_attack(args) -> int:
    params = load_checkpoint(args.checkpoint)
    data, _ = _load_data(_eval_settings(args), args.split)
    data.check(params.config.num_classes, params.config.input_dim)
    count = min(args.count, len(data))
    if count < 1:
        raise UsageError("--count must be >= 1")
    x, y = data.images[:count], data.labels[:count]
    x_adv = fgsm(params, x, y, AttackConfig(args.eval_epsilon, not args.no_clip))
    clean_pred, adv_pred = predict(params, x), predict(params, x_adv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d = params.config.input_dim
    side = int(round(np.sqrt(d)))
    shape = (count, side, side) if side * side == d else (count, 1, d)
    dataset.write_idx_images(out / "original-images-idx3-ubyte", dataset.quantize(x).reshape(shape))
    dataset.write_idx_images(out / "adversarial-images-idx3-ubyte", dataset.quantize(x_adv).reshape(shape))
    dataset.write_idx_labels(out / "labels-idx1-ubyte", y)
    with open(out / "attack.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["index", "true_label", "clean_prediction", "adversarial_prediction"])
        for i in range(count):
            w.writerow([i, int(y[i]), int(clean_pred[i]), int(adv_pred[i])])
    flipped = float(np.mean(clean_pred != adv_pred))
    print(f"wrote {count} pairs to {out}; prediction flipped on {flipped:.1%}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    results = gradcheck.run_gradcheck(args.seed, args.trials, corrupt=args.corrupt)
    failing = [r for r in results if not r.error < gradcheck.TOLERANCE]
    w = gradcheck.worst(results)
    print(f"{len(results)} checks over {args.trials} trials; worst relative error "
          f"{w.error:.3e} ({w.loss} / {w.tensor}, trial {w.trial})")
    for r in failing:
        print(f"FAIL trial {r.trial} {r.loss} {r.tensor}: {r.error:.3e}")
    print("PASS" if not failing else "FAIL")
    return 0 if not failing else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="advaug", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one mode and write metrics, checkpoint and report")
    t.add_argument("--config", help="flat key = value file; flags override it")
    t.add_argument("--mode", choices=["simple", "at", "a2t", "a3t"])
    t.add_argument("--mnist-dir", dest="mnist_dir")
    t.add_argument("--synthetic", type=int, metavar="N_PER_CLASS",
                   help="use the two-Gaussians fixture instead of MNIST")
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--alpha", type=float)
    t.add_argument("--beta", type=float)
    t.add_argument("--train-epsilon", dest="train_epsilon", type=float)
    t.add_argument("--eval-epsilon", dest="eval_epsilon", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--disc-updates", dest="disc_updates", type=int)
    t.add_argument("--validation-count", dest="validation_count", type=int)
    t.add_argument("--no-clip", action="store_true")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "clean and adversarial accuracy of a checkpoint"),
                                 ("attack", cmd_attack, "export adversarial examples as IDX")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--mnist-dir", dest="mnist_dir")
        e.add_argument("--synthetic", type=int, metavar="N_PER_CLASS")
        e.add_argument("--split", choices=["train", "test"], default="test")
        e.add_argument("--eval-epsilon", "--epsilon", dest="eval_epsilon", type=float, default=0.1)
        e.add_argument("--no-clip", action="store_true")
        e.add_argument("--out", required=(name == "attack"))
        if name == "eval":
            e.add_argument("--epsilons", help="comma-separated sweep, e.g. 0,0.05,0.1,0.25")
        else:
            e.add_argument("--count", type=int, default=100)
        e.set_defaults(func=func)

    g = sub.add_parser("gradcheck", help="finite-difference check of all analytic gradients")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trials", type=int, default=50)
    g.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        parser.print_usage(sys.stderr)
        print(f"advaug: error: {e}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, TrainingError, OSError) as e:
        print(f"advaug: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
