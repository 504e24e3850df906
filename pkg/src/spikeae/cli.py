"""Command line experiment runner.

Subcommands: ``train-ae``, ``eval``, ``train-audio``, ``synthesize`` and
``sweep``.  Every subcommand accepts ``--config PATH`` (a flat ``key =
value`` file whose keys are the long option names), ``--seed`` and
``--out``; options given on the command line override the file.

Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
4 numerical instability.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import data_io
from .errors import (
    ConfigError,
    ConsistencyError,
    DataIOError,
    FormatError,
    InputDomainError,
    NumericalInstabilityError,
    StructuralError,
)
from .experiments import (
    AUDIO_COLUMNS,
    EVAL_COLUMNS,
    LOSS_COLUMNS,
    AudioData,
    audio_rows,
    eval_row,
    evaluate_autoencoder,
    load_split,
    loss_rows,
    min_class_assignment,
    run_audio_pipeline,
    run_autoencoder,
    synthetic_audio,
    write_csv,
)
from .network import TrainConfig, synthesize_images
from .seeding import stream

log = logging.getLogger("spikeae")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
SWEEP_PARAMS = ("alpha", "T", "hidden", "mask", "T_h")


def parse_config_file(path):
    """Read ``key = value`` lines; ``#`` starts a comment. Keys use ``-`` or ``_``."""
    values = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _on_off(text):
    t = str(text).lower()
    if t in ("on", "true", "1", "yes"):
        return True
    if t in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _common(p):
    p.add_argument("--config", help="flat key = value file; command-line flags win")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _neuron_opts(p, T=15, lr=5e-4, batch_size=100, epochs=1):
    p.add_argument("--v-th", type=float, default=1.0)
    p.add_argument("--T", type=int, default=T, help="input spike train duration")
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=batch_size)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--max-rate", type=float, default=1.0, help="spike probability per step for an input of 1")
    p.add_argument("--mask", type=_on_off, default=True, help="XOR error mask on/off")


def _image_opts(p):
    p.add_argument("--data-dir", help="directory with IDX files in MNIST naming")
    p.add_argument("--train-images")
    p.add_argument("--train-labels")
    p.add_argument("--test-images")
    p.add_argument("--test-labels")
    p.add_argument("--n-train", type=int, help="use only the first N training images")
    p.add_argument("--n-test", type=int, help="use only the first N test images")


def _audio_opts(p):
    p.add_argument("--spectrograms", help="SPC1 training spectrograms (default: synthetic set)")
    p.add_argument("--audio-labels", help="IDX label file for --spectrograms")
    p.add_argument("--test-spectrograms")
    p.add_argument("--test-audio-labels")
    p.add_argument("--synthetic-train-per-class", type=int, default=20)
    p.add_argument("--synthetic-test-per-class", type=int, default=5)
    p.add_argument("--channels", type=int, default=39)
    p.add_argument("--frames", type=int, default=100)


def build_parser():
    parser = argparse.ArgumentParser(prog="spikeae", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-ae", help="train a spiking autoencoder")
    _common(p)
    _image_opts(p)
    _neuron_opts(p)
    p.add_argument("--alpha", type=_float_list, default=[0.1], help="leak; a comma list runs one job per value")
    p.add_argument("--hidden", type=int, default=196)
    p.add_argument("--n-show", type=int, default=20, help="reconstructions in the contact sheet")

    p = sub.add_parser("eval", help="evaluate an autoencoder checkpoint")
    _common(p)
    _image_opts(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--T", type=int, help="inference duration (default: training duration)")
    p.add_argument("--max-rate", type=float)

    p = sub.add_parser("train-audio", help="train an audiocoder against stored hidden states")
    _common(p)
    _image_opts(p)
    _audio_opts(p)
    _neuron_opts(p, T=60, lr=5e-5, batch_size=50, epochs=20)
    p.add_argument("--ae-checkpoint", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--T-h", type=_int_list, default=[10], help="stored hidden-state length; a comma list runs one job per value")
    p.add_argument("--mode", choices=("A", "B"), default="A")
    p.add_argument("--hidden", type=int, default=512)

    p = sub.add_parser("synthesize", help="synthesize images from audio")
    _common(p)
    _audio_opts(p)
    p.add_argument("--ae-checkpoint", required=True)
    p.add_argument("--audiocoder", required=True)
    p.add_argument("--T", type=int, help="audio presentation length (default: audiocoder training length)")
    p.add_argument("--max-rate", type=float)
    p.add_argument("--ids", type=_int_list, help="indices into the test spectrogram set")
    p.add_argument("--per-class", type=int, default=5, help="samples per class when --ids is not given")

    p = sub.add_parser("sweep", help="ablation: rerun training for each value of one parameter")
    _common(p)
    _image_opts(p)
    _audio_opts(p)
    _neuron_opts(p)
    p.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    p.add_argument("--values", required=True, help="comma-separated values of --param")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=196)
    p.add_argument("--ae-checkpoint", help="required for --param T_h")
    p.add_argument("--mode", choices=("A", "B"), default="A")
    p.add_argument("--T-audio", type=int, default=60)
    p.add_argument("--audio-hidden", type=int, default=512)
    p.add_argument("--audio-epochs", type=int, default=20)
    p.add_argument("--audio-lr", type=float, default=5e-5)
    p.add_argument("--audio-batch-size", type=int, default=50)
    p.add_argument("--n-show", type=int, default=0)
    return parser, sub


def parse_args(argv):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = parse_config_file(args.config)
        subparser = sub.choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        subparser.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def _image_paths(args, split):
    images, labels = getattr(args, f"{split}_images"), getattr(args, f"{split}_labels")
    if images or labels:
        if not (images and labels):
            raise ConfigError(f"--{split}-images and --{split}-labels must be given together")
        return images, labels
    if args.data_dir:
        return None
    return False


def load_images(args, split, required=True):
    paths = _image_paths(args, split)
    n = getattr(args, f"n_{split}", None)
    if paths is None:
        return load_split(args.data_dir, split, n)
    if paths is False:
        if required:
            raise ConfigError(f"no {split} images: pass --data-dir or --{split}-images/--{split}-labels")
        return None
    data = data_io.load_idx(*paths)
    return data if n is None else data.subset(slice(0, n))


def load_audio(args):
    if args.spectrograms:
        train = data_io.load_spectrograms(args.spectrograms, args.audio_labels)
        if not args.test_spectrograms:
            raise ConfigError("--spectrograms needs --test-spectrograms")
        test = data_io.load_spectrograms(args.test_spectrograms, args.test_audio_labels)
        return AudioData(train, test)
    return synthetic_audio(
        args.seed,
        train_per_class=args.synthetic_train_per_class,
        test_per_class=args.synthetic_test_per_class,
        n_channels=args.channels,
        n_frames=args.frames,
    )


def _train_config(args, **over):
    kw = dict(
        alpha=args.alpha if not isinstance(args.alpha, list) else args.alpha[0],
        v_th=args.v_th,
        T=args.T,
        lr=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        max_rate=args.max_rate,
        use_mask=args.mask,
    )
    kw.update(over)
    return TrainConfig(**kw)


def _tag(name, value, several):
    return f"_{name}{value}" if several else ""


def _save_sheet(path, counts, n_show, cols=10):
    if n_show <= 0 or len(counts) == 0:
        return
    shown = counts[:n_show]
    rows = -(-len(shown) // cols)
    sheet = data_io.contact_sheet(shown, rows, min(cols, len(shown)))
    data_io.write_pgm(path, sheet, shape=sheet.shape)


def _train_one_ae(args, train, test, cfg, hidden, tag):
    result = run_autoencoder(train, cfg, hidden=hidden, test=test)
    os.makedirs(args.out, exist_ok=True)
    data_io.save_checkpoint(os.path.join(args.out, f"ae{tag}.saec"), result.net, cfg)
    write_csv(os.path.join(args.out, f"loss{tag}.csv"), LOSS_COLUMNS, loss_rows(result.log))
    shown = test if test is not None else train
    if args.n_show and len(shown):
        from .network import reconstruct

        sample = shown.subset(slice(0, args.n_show))
        _, out = reconstruct(result.net, sample.flat(), cfg.T, stream(cfg.seed, "sheet"), cfg.max_rate)
        pairs = np.empty((2 * len(out), out.shape[1]))
        pairs[0::2], pairs[1::2] = sample.flat(), out
        _save_sheet(os.path.join(args.out, f"recon{tag}.pgm"), pairs, 2 * len(out), cols=10)
    if result.test is not None:
        print(f"{tag or 'run'}: test spike-MSE {result.test.spike_mse:.4f} pixel MSE {result.test.pixel_mse:.4f}")
    return result


def cmd_train_ae(args):
    train = load_images(args, "train")
    test = load_images(args, "test", required=False)
    several = len(args.alpha) > 1
    for alpha in args.alpha:
        cfg = _train_config(args, alpha=alpha)
        _train_one_ae(args, train, test, cfg, args.hidden, _tag("alpha", alpha, several))
    return EXIT_OK


def cmd_eval(args):
    net, cfg = data_io.load_checkpoint(args.checkpoint)
    T = args.T or (cfg.T if cfg else None)
    if T is None:
        raise ConfigError("checkpoint has no training duration; pass --T")
    max_rate = args.max_rate or (cfg.max_rate if cfg else 1.0)
    seed = args.seed
    rows = []
    for split in ("train", "test"):
        data = load_images(args, split, required=False)
        if data is None:
            continue
        if data.height * data.width != net.topology[0]:
            raise StructuralError(f"checkpoint expects width {net.topology[0]}, {split} images have {data.height * data.width}")
        report = evaluate_autoencoder(net, data, T, seed, max_rate)
        rows.append(eval_row(split, report))
        print(f"{split}: n={report.n_samples} spike-MSE {report.spike_mse:.4f} pixel MSE {report.pixel_mse:.4f}")
    if not rows:
        raise ConfigError("nothing to evaluate: pass --data-dir or image paths")
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "eval.csv"), EVAL_COLUMNS, rows)
    return EXIT_OK


def _run_audio(args, ae, ae_cfg, images, audio, cfg, hidden, mode, tag):
    result = run_audio_pipeline(ae, ae_cfg.T, images, audio, cfg, mode=mode, hidden=hidden, ae_max_rate=ae_cfg.max_rate)
    os.makedirs(args.out, exist_ok=True)
    data_io.save_checkpoint(os.path.join(args.out, f"audiocoder{tag}.saec"), result.net, cfg)
    write_csv(os.path.join(args.out, f"audio_loss{tag}.csv"), AUDIO_COLUMNS, audio_rows(result.epochs))
    write_csv(
        os.path.join(args.out, f"pairs{tag}.csv"),
        ("audio_index", "image_index", "label"),
        [[p.audio_index, p.image_index, p.label] for p in result.pairs],
    )
    acc = result.nearest_class_accuracy(audio.test.labels)
    print(f"{tag or 'run'}: test MSE {result.final_test_mse:.4f} nearest-class accuracy {acc:.3f}")
    return result


def _load_ae(path):
    ae, ae_cfg = data_io.load_checkpoint(path)
    if len(ae.layers) != 2:
        raise StructuralError(f"{path} is not a two-layer autoencoder")
    return ae, ae_cfg or TrainConfig()


def cmd_train_audio(args):
    ae, ae_cfg = _load_ae(args.ae_checkpoint)
    images = load_images(args, "train")
    audio = load_audio(args)
    several = len(args.T_h) > 1
    for T_h in args.T_h:
        if T_h > ae_cfg.T:
            raise ConfigError(f"T_h={T_h} exceeds the autoencoder duration {ae_cfg.T}")
        cfg = _train_config(args, T_h=T_h)
        _run_audio(args, ae, ae_cfg, images, audio, cfg, args.hidden, args.mode, _tag("Th", T_h, several))
    return EXIT_OK


def cmd_synthesize(args):
    ae, _ = _load_ae(args.ae_checkpoint)
    coder, coder_cfg = data_io.load_checkpoint(args.audiocoder)
    coder_cfg = coder_cfg or TrainConfig(T=60)
    T = args.T or coder_cfg.T
    max_rate = args.max_rate or coder_cfg.max_rate
    test = load_audio(args).test
    if args.ids:
        if max(args.ids) >= test.n or min(args.ids) < 0:
            raise ConfigError(f"--ids must lie in [0, {test.n})")
        idx = np.array(args.ids)
    else:
        idx = np.concatenate([np.flatnonzero(test.labels == c)[: args.per_class] for c in np.unique(test.labels)])
    if test.flat().shape[1] != coder.topology[0]:
        raise StructuralError(f"audiocoder expects {coder.topology[0]} inputs, audio has {test.flat().shape[1]}")
    counts = synthesize_images(test.flat()[idx], coder, ae.layers[1], T, stream(args.seed, "synthesis"), max_rate)
    os.makedirs(args.out, exist_ok=True)
    for i, c in zip(idx, counts):
        data_io.write_pgm(os.path.join(args.out, f"sample{i:04d}_label{test.labels[i]}.pgm"), c)
    labels = test.labels[idx]
    classes = np.unique(labels)
    per = max(int(np.sum(labels == c)) for c in classes)
    # one column per class, one row per sample
    grid = np.zeros((per * len(classes), counts.shape[1]))
    for k, c in enumerate(classes):
        for r, row in enumerate(counts[labels == c]):
            grid[r * len(classes) + k] = row
    sheet = data_io.contact_sheet(grid, per, len(classes))
    data_io.write_pgm(os.path.join(args.out, "synth_sheet.pgm"), sheet, shape=sheet.shape)
    print(f"wrote {len(idx)} images and a {per}x{len(classes)} contact sheet to {args.out}")
    return EXIT_OK


def cmd_sweep(args):
    if args.param == "T_h":
        return _sweep_audio(args)
    train = load_images(args, "train")
    test = load_images(args, "test", required=False)
    conv = {"alpha": float, "T": int, "hidden": int, "mask": _on_off}[args.param]
    try:
        values = [conv(v.strip()) for v in args.values.split(",") if v.strip()]
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise ConfigError(f"bad --values for {args.param}: {exc}") from exc
    if not values:
        raise ConfigError("--values is empty")
    summary = []
    for value in values:
        over = {"alpha": args.alpha}
        hidden = args.hidden
        if args.param == "hidden":
            hidden = value
        elif args.param == "mask":
            over["use_mask"] = value
        else:
            over[args.param] = value
        cfg = _train_config(args, **over)
        label = "on" if value is True else "off" if value is False else value
        result = _train_one_ae(args, train, test, cfg, hidden, f"_{args.param}{label}")
        loss = result.log.column("spike_mse_loss")
        row = [args.param, label, float(loss[-1]), float(result.log.column("mask_sparsity").mean())]
        row += [result.test.spike_mse, result.test.pixel_mse] if result.test else [float("nan")] * 2
        summary.append(row)
    write_csv(
        os.path.join(args.out, f"sweep_{args.param}.csv"),
        ("param", "value", "final_spike_mse_loss", "mean_mask_sparsity", "test_spike_mse", "test_pixel_mse"),
        summary,
    )
    return EXIT_OK


def _sweep_audio(args):
    if not args.ae_checkpoint:
        raise ConfigError("--param T_h needs --ae-checkpoint")
    ae, ae_cfg = _load_ae(args.ae_checkpoint)
    images = load_images(args, "train")
    audio = load_audio(args)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --values for T_h: {exc}") from exc
    if not values:
        raise ConfigError("--values is empty")
    summary = []
    for T_h in values:
        if T_h > ae_cfg.T:
            raise ConfigError(f"T_h={T_h} exceeds the autoencoder duration {ae_cfg.T}")
        cfg = _train_config(
            args,
            T=args.T_audio,
            T_h=T_h,
            lr=args.audio_lr,
            batch_size=args.audio_batch_size,
            epochs=args.audio_epochs,
        )
        result = _run_audio(args, ae, ae_cfg, images, audio, cfg, args.audio_hidden, args.mode, f"_Th{T_h}")
        summary.append(["T_h", T_h, result.final_test_mse, result.nearest_class_accuracy(audio.test.labels)])
    write_csv(os.path.join(args.out, "sweep_T_h.csv"), ("param", "value", "final_test_mse", "nearest_class_accuracy"), summary)
    return EXIT_OK


COMMANDS = {
    "train-ae": cmd_train_ae,
    "eval": cmd_eval,
    "train-audio": cmd_train_audio,
    "synthesize": cmd_synthesize,
    "sweep": cmd_sweep,
}


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except (ConfigError, InputDomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataIOError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InputDomainError, StructuralError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataIOError, FormatError, ConsistencyError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalInstabilityError as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
