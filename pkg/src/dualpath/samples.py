"""Bundled sample images written out as a PGM corpus.

Uses pictures shipped with scikit-image, scikit-learn and matplotlib, so no
download is needed. The eight ``TEST_IMAGES`` are photographs held out for
evaluation; ``TRAIN_IMAGES`` are everything else that is photographic or
textured. Requires the ``samples`` extra.
"""

from pathlib import Path

import numpy as np

from .imaging import GrayImage, save_pgm

TEST_IMAGES = ("astronaut", "camera", "chelsea", "china", "coffee", "grace_hopper",
               "motorcycle", "rocket")
TRAIN_IMAGES = ("brick", "cell", "coins", "flower", "grass", "gravel", "hubble", "ihc",
                "moon", "retina")


def _skimage(name):
    import skimage.io
    from skimage import data

    files = {"hubble": "hubble_deep_field.jpg", "retina": "retina.jpg", "ihc": "ihc.png",
             "motorcycle": "motorcycle_left.png", "rocket": "rocket.jpg"}
    if name in files:
        return skimage.io.imread(Path(data.__file__).parent / files[name])
    return getattr(data, name)()


def _load(name) -> np.ndarray:
    if name in ("china", "flower"):
        from sklearn.datasets import load_sample_image
        return load_sample_image(f"{name}.jpg")
    if name == "grace_hopper":
        import matplotlib.cbook
        import matplotlib.image
        with matplotlib.cbook.get_sample_data("grace_hopper.jpg") as fh:
            return matplotlib.image.imread(fh, format="jpg")
    return _skimage(name)


def to_gray(rgb) -> np.ndarray:
    """ITU-R 601 luma on the [0, 1] scale, quantized to 8 bits."""
    a = np.asarray(rgb)
    scale = 255.0 if a.dtype == np.uint8 else (1.0 if a.max() <= 1.0 else 255.0)
    a = a.astype(np.float64) / scale
    if a.ndim == 3:
        a = a[..., :3] @ np.array([0.299, 0.587, 0.114])
    return np.floor(np.clip(a, 0, 1) * 255 + 0.5) / 255


def sample_image(name) -> GrayImage:
    return GrayImage(to_gray(_load(name)))


def write_sample_corpus(out_dir, names) -> list:
    """Write the named sample images as ``<name>.pgm`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in names:
        path = out / f"{name}.pgm"
        save_pgm(sample_image(name), path)
        paths.append(path)
    return paths


def write_sample_corpora(root) -> tuple:
    """``root/train`` and ``root/test`` corpora; returns the two directories."""
    root = Path(root)
    write_sample_corpus(root / "train", TRAIN_IMAGES)
    write_sample_corpus(root / "test", TEST_IMAGES)
    return root / "train", root / "test"


if __name__ == "__main__":
    import sys
    print(*write_sample_corpora(sys.argv[1] if len(sys.argv) > 1 else "corpus"))
