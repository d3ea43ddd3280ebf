"""Datasets, experiment runners and the PSNR evaluation suite.

Every runner is a pure function of its :class:`ExperimentConfig` and seed.
Random streams are derived with :class:`numpy.random.SeedSequence`: dataset
sampling uses ``SeedSequence(seed).spawn`` per fixed-size chunk, network
initialization uses ``SeedSequence([seed, 1])``, and test-patch sampling
``SeedSequence([seed, 2])``. Noise for evaluating image ``i`` at noise level
index ``k`` with seed ``s`` comes from ``SeedSequence([s, i, k])``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import analysis
from .errors import ConfigError, NumericFailure
from .formats import save_dataset, save_model
from .imaging import GrayImage, NoiseSpec, add_awgn, denoise_image, load_pgm, psnr, save_pgm
from .nn import ActivationKind, NetworkParams, PatchBatch, forward, init_params
from .optim import LBFGSConfig, TrainConfig, minibatch_train

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "load_corpus",
    "split_corpus",
    "sample_patches",
    "build_patch_dataset",
    "init_network",
    "dual_twin",
    "run_autoencoder_experiment",
    "run_denoiser_training",
    "PsnrTable",
    "evaluate_suite",
    "write_csv",
]

PAPER_SIGMAS = (15, 25, 35, 50, 75, 100)
_CHUNK = 65536


@dataclass
class ExperimentConfig:
    """Everything an experiment depends on; mirrors the JSON config file one-to-one."""

    corpus_dir: str = "corpus"
    test_dir: Optional[str] = None
    patch_in: int = 17
    patch_out: int = 9
    sigma_255: float = 25.0
    n_train: int = 200_000
    n_test: int = 20_000
    hidden: List[int] = field(default_factory=lambda: [512, 512, 512, 512])
    activation: str = "dual"
    tied: bool = False
    widths: List[int] = field(default_factory=lambda: [100, 200])
    seeds: List[int] = field(default_factory=lambda: [0])
    stride: int = 3
    train: TrainConfig = field(default_factory=TrainConfig)
    lbfgs: LBFGSConfig = field(default_factory=LBFGSConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if isinstance(self.lbfgs, dict):
            self.lbfgs = LBFGSConfig(**self.lbfgs)
        if self.patch_out > self.patch_in or self.patch_out < 1:
            raise ConfigError(f"patch_out {self.patch_out} must be in 1..patch_in")
        if (self.patch_in - self.patch_out) % 2:
            raise ConfigError("patch_in - patch_out must be even so the target is centered")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be positive")
        if not self.sigma_255 > 0:
            raise ConfigError("sigma_255 must be positive")
        if self.activation not in ("linear", "tanh", "rectifier", "dual"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        for key, value in changes.items():
            if key in ("train", "lbfgs") and isinstance(value, dict):
                d[key].update(value)
            else:
                d[key] = value
        return ExperimentConfig.from_dict(d)

    @property
    def dims(self) -> list:
        return [self.patch_in**2, *self.hidden, self.patch_out**2]


# --------------------------------------------------------------------------
# Corpus and patch sampling
# --------------------------------------------------------------------------

def load_corpus(directory) -> list:
    """All ``*.pgm`` files in ``directory`` as ``(name, GrayImage)``, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"corpus directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".pgm")
    if not files:
        raise ConfigError(f"no PGM images in {directory}")
    return [(p.stem, load_pgm(p)) for p in files]


def split_corpus(cfg: ExperimentConfig):
    """``(train_images, test_images)``; without ``test_dir`` the last fifth of the corpus is held out."""
    images = load_corpus(cfg.corpus_dir)
    if cfg.test_dir:
        return images, load_corpus(cfg.test_dir)
    if len(images) < 2:
        raise ConfigError("need a test_dir or at least two corpus images to hold one out")
    n_test = max(1, len(images) // 5)
    return images[:-n_test], images[-n_test:]


def sample_patches(images, n: int, patch_in: int, patch_out: int, sigma_255: float,
                   seed: int) -> PatchBatch:
    """Draw ``n`` noisy/clean patch pairs uniformly over images, then positions.

    Inputs are noisy ``patch_in`` patches, targets the clean centered
    ``patch_out`` block; both have the noisy patch's mean removed, which is
    stored in ``dc``. Arrays are float32. Chunk ``c`` of 65536 samples uses the
    ``c``-th child of ``SeedSequence(seed)``.
    """
    imgs = [im.pixels if isinstance(im, GrayImage) else im[1].pixels for im in images]
    if not imgs:
        raise ConfigError("no images to sample from")
    smallest = min(min(im.shape) for im in imgs)
    if patch_in > smallest:
        raise ConfigError(f"patch size {patch_in} exceeds smallest image side {smallest}")
    d_in, d_out = patch_in * patch_in, patch_out * patch_out
    off = (patch_in - patch_out) // 2
    sigma = sigma_255 / 255.0
    X = np.empty((n, d_in), dtype=np.float32)
    Y = np.empty((n, d_out), dtype=np.float32)
    dc = np.empty(n, dtype=np.float32)
    heights = np.array([im.shape[0] - patch_in + 1 for im in imgs])
    widths = np.array([im.shape[1] - patch_in + 1 for im in imgs])
    windows = [sliding_window_view(im, (patch_in, patch_in)) for im in imgs]
    children = np.random.SeedSequence(seed).spawn(math.ceil(n / _CHUNK))
    for c, child in enumerate(children):
        rng = np.random.default_rng(child)
        lo = c * _CHUNK
        m = min(_CHUNK, n - lo)
        which = rng.integers(len(imgs), size=m)
        rows = rng.integers(0, heights[which])
        cols = rng.integers(0, widths[which])
        clean = np.empty((m, patch_in, patch_in))
        for k, win in enumerate(windows):
            sel = which == k
            if sel.any():
                clean[sel] = win[rows[sel], cols[sel]]
        noisy = clean.reshape(m, d_in) + rng.standard_normal((m, d_in)) * sigma
        mean = noisy.mean(axis=1)
        X[lo:lo + m] = noisy - mean[:, None]
        target = clean[:, off:off + patch_out, off:off + patch_out].reshape(m, d_out)
        Y[lo:lo + m] = target - mean[:, None]
        dc[lo:lo + m] = mean
    return PatchBatch(X, Y, dc)


def build_patch_dataset(cfg: ExperimentConfig, path=None, seed: int = None,
                        images=None) -> PatchBatch:
    """Training patches for ``cfg`` (``cfg.n_train`` of them), optionally written as DPDS."""
    seed = cfg.seeds[0] if seed is None else seed
    if images is None:
        images = load_corpus(cfg.corpus_dir)
    batch = sample_patches(images, cfg.n_train, cfg.patch_in, cfg.patch_out, cfg.sigma_255, seed)
    if path is not None:
        save_dataset(batch, path)
    return batch


# --------------------------------------------------------------------------
# Networks
# --------------------------------------------------------------------------

def init_network(dims, activation: str, seed: int, tied: bool = False) -> NetworkParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    return init_params(dims, activation, rng, tied=tied)


def dual_twin(params: NetworkParams) -> NetworkParams:
    """Copy of a rectifier network with every hidden layer made dual-pathway (``t = 0``)."""
    layers = []
    for l, spec in enumerate(params.layers):
        hidden = l < len(params.layers) - 1
        act = ActivationKind.dual(np.zeros(spec.out_dim)) if hidden else spec.activation
        layers.append(dataclasses.replace(spec, activation=act))
    weights = [None if w is None else w.copy() for w in params.weights]
    return NetworkParams(layers, weights, [b.copy() for b in params.biases])


def patch_rmse(params: NetworkParams, batch: PatchBatch, chunk: int = 20000) -> float:
    """Mean over patches of each patch's RMSE between output and target ([0, 1] scale)."""
    total = 0.0
    for start in range(0, batch.n, chunk):
        sl = slice(start, start + chunk)
        out = forward(params, batch.X[sl])[0]
        err = out - batch.Y[sl].astype(np.float64)
        total += float(np.sqrt(np.mean(err * err, axis=1)).sum())
    return total / batch.n


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# --------------------------------------------------------------------------
# Autoencoder / dictionary experiment
# --------------------------------------------------------------------------

def run_autoencoder_experiment(cfg: ExperimentConfig, out_dir=None, images=None,
                               threshold: float = 160.0, bin_width: float = 5.0,
                               figures: bool = True) -> dict:
    """Tied single-hidden-layer plain vs dual-pathway denoising autoencoders.

    For every seed and hidden width in ``cfg.widths`` both variants start from
    the same weights and see the same minibatch sequence. Returns a report
    dict; with ``out_dir`` also writes ``rmse.csv``, per-run histogram CSVs,
    atom montages (PGM), models (DPRN) and figures (PNG).
    """
    if cfg.patch_in != cfg.patch_out:
        raise ConfigError("the autoencoder experiment needs patch_in == patch_out")
    if images is None:
        train_imgs, test_imgs = split_corpus(cfg)
    else:
        train_imgs, test_imgs = images
    d = cfg.patch_in**2
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    runs = []
    for seed in cfg.seeds:
        train = sample_patches(train_imgs, cfg.n_train, cfg.patch_in, cfg.patch_out,
                               cfg.sigma_255, seed)
        test_seed = int(np.random.SeedSequence([seed, 2]).generate_state(1)[0])
        test = sample_patches(test_imgs, cfg.n_test, cfg.patch_in, cfg.patch_out,
                              cfg.sigma_255, test_seed)
        noisy_rmse = float(np.mean(np.sqrt(np.mean(
            (test.X.astype(np.float64) - test.Y) ** 2, axis=1))))
        for width in cfg.widths:
            plain0 = init_network([d, width, d], "rectifier", seed, tied=True)
            tcfg = dataclasses.replace(cfg.train, seed=seed)
            for variant, start in (("rectifier", plain0), ("dual", dual_twin(plain0))):
                log.info("autoencoder seed=%d width=%d variant=%s", seed, width, variant)
                params, losses = minibatch_train(start, train, tcfg, cfg.lbfgs)
                D = analysis.Dictionary.from_params(params)
                ordering = analysis.greedy_pair_sort(D)
                counts, edges = analysis.angle_histogram(D, bin_width)
                run = {
                    "seed": seed,
                    "width": width,
                    "variant": variant,
                    "test_rmse": patch_rmse(params, test),
                    "noisy_rmse": noisy_rmse,
                    "reversed_fraction": analysis.reversed_pair_fraction(D, threshold, ordering),
                    "pairs_above_170": int(np.sum(ordering.angles > 170.0)),
                    "max_pair_angle": float(ordering.angles.max()),
                    "final_loss": float(losses[-1]),
                    "histogram": counts.tolist(),
                    "pair_angles": ordering.angles.tolist(),
                    "params": params,
                    "losses": losses,
                }
                runs.append(run)
                if out is not None:
                    _write_autoencoder_run(out, run, D, ordering, edges, test, cfg.patch_in,
                                           figures)
    report = {
        "threshold": threshold,
        "bin_width": bin_width,
        "runs": runs,
    }
    if out is not None:
        write_csv(out / "rmse.csv",
                  ["seed", "width", "variant", "test_rmse", "noisy_rmse", "reversed_fraction",
                   "pairs_above_170", "max_pair_angle", "final_loss"],
                  [[r[k] for k in ("seed", "width", "variant", "test_rmse", "noisy_rmse",
                                   "reversed_fraction", "pairs_above_170", "max_pair_angle",
                                   "final_loss")] for r in runs])
        if figures:
            from . import plotting
            plotting.plot_rmse_vs_width(runs, out / "rmse_vs_width.png")
    return report


def _write_autoencoder_run(out: Path, run, D, ordering, edges, test, side, figures):
    tag = f"seed{run['seed']}_w{run['width']}_{run['variant']}"
    write_csv(out / f"hist_{tag}.csv", ["bin_start", "bin_end", "count"],
              zip(edges[:-1], edges[1:], run["histogram"]))
    write_csv(out / f"pairs_{tag}.csv", ["i", "j", "angle"], ordering.pairs)
    save_pgm(analysis.atom_montage(D, side, ordering), out / f"atoms_{tag}.pgm")
    save_model(run["params"], out / f"model_{tag}.dprn")
    params = run["params"]
    unit, companion = ordering.pairs[0][0], ordering.pairs[0][1]
    sample = test.X[:2000].astype(np.float64)
    if run["variant"] == "dual":
        trace = analysis.activation_trace(params, sample, unit)
    else:
        trace = analysis.activation_trace(params, sample, unit, companion)
    write_csv(out / f"trace_{tag}.csv", list(analysis.TRACE_COLUMNS), trace)
    if figures:
        from . import plotting
        plotting.plot_angle_histogram(run["histogram"], edges, out / f"hist_{tag}.png",
                                      title=tag)
        plotting.plot_activation_trace(trace, out / f"trace_{tag}.png", title=tag)


# --------------------------------------------------------------------------
# Deep denoiser
# --------------------------------------------------------------------------

def run_denoiser_training(cfg: ExperimentConfig, dataset: PatchBatch = None, out_dir=None,
                          seed: int = None, activation: str = None,
                          init: NetworkParams = None):
    """Train a patch denoiser with :func:`minibatch_train`.

    Returns ``(params, losses)``. With ``out_dir`` writes ``model.dprn`` and
    ``training_log.csv``; if training fails numerically the last finite
    parameters go to ``checkpoint.dprn`` before the error propagates.
    """
    seed = cfg.seeds[0] if seed is None else seed
    activation = activation or cfg.activation
    if dataset is None:
        dataset = build_patch_dataset(cfg, seed=seed)
    if init is None:
        init = init_network(cfg.dims, "rectifier", seed)
        if activation == "dual":
            init = dual_twin(init)
        elif activation != "rectifier":
            init = init_params(cfg.dims, activation,
                               np.random.default_rng(np.random.SeedSequence([seed, 1])))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    tcfg = dataclasses.replace(cfg.train, seed=seed)
    try:
        params, losses = minibatch_train(init, dataset, tcfg, cfg.lbfgs)
    except NumericFailure as exc:
        if out is not None and exc.last_good is not None:
            save_model(exc.last_good, out / "checkpoint.dprn")
        raise
    if out is not None:
        save_model(params, out / "model.dprn")
        write_csv(out / "training_log.csv", ["minibatch", "loss"], enumerate(losses))
    return params, losses


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

@dataclass
class PsnrTable:
    """PSNR per image and noise level (averaged over seeds), plus column averages."""

    images: List[str]
    sigmas: List[float]
    values: np.ndarray  # (n_images, n_sigmas)

    @property
    def averages(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def rows(self):
        for name, row in zip(self.images, self.values):
            yield [name, *row]
        yield ["Average", *self.averages]

    def header(self):
        return ["image", *[f"sigma={_sigma_label(s)}" for s in self.sigmas]]

    def to_csv(self, path) -> None:
        write_csv(path, self.header(), self.rows())

    def format(self) -> str:
        head = f"{'image':<16}" + "".join(f"{_sigma_label(s):>9}" for s in self.sigmas)
        lines = [head]
        for row in self.rows():
            lines.append(f"{row[0]:<16}" + "".join(f"{v:9.2f}" for v in row[1:]))
        return "\n".join(lines)


def _sigma_label(s) -> str:
    return f"{s:g}"


def evaluate_suite(model: Optional[NetworkParams], images, sigmas=PAPER_SIGMAS, seeds=(0,),
                   stride: int = 3) -> PsnrTable:
    """PSNR of denoised (or, with ``model=None``, merely noisy) images.

    ``images`` is a directory of PGMs or a list of ``(name, GrayImage)``.
    """
    if isinstance(images, (str, os.PathLike)):
        images = load_corpus(images)
    sigmas = [float(s) for s in sigmas]
    values = np.zeros((len(images), len(sigmas)))
    for i, (name, clean) in enumerate(images):
        for k, sigma in enumerate(sigmas):
            scores = []
            for s in seeds:
                rng = np.random.default_rng(np.random.SeedSequence([s, i, k]))
                noisy = add_awgn(clean, NoiseSpec(sigma, s), rng=rng)
                result = noisy if model is None else denoise_image(model, noisy, stride=stride)
                scores.append(psnr(clean, result))
            values[i, k] = float(np.mean(scores))
            log.info("%s sigma=%g psnr=%.2f", name, sigma, values[i, k])
    return PsnrTable([n for n, _ in images], sigmas, values)
