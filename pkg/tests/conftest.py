import numpy as np
import pytest

from dualpath.imaging import GrayImage, save_pgm


def texture(h, w, seed):
    """Smooth oriented stripes plus edges, quantized to 8 bits."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w]
    theta = rng.uniform(0, np.pi)
    u = x * np.cos(theta) + y * np.sin(theta)
    img = 0.5 + 0.25 * np.sin(u / rng.uniform(2, 6)) + 0.15 * (x > rng.integers(w // 4, w))
    return GrayImage(np.round(np.clip(img, 0, 1) * 255) / 255)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Six small synthetic PGM images; returns the directory."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    for k in range(6):
        save_pgm(texture(40 + 4 * k, 36 + 2 * k, k), root / f"img{k}.pgm")
    return root


@pytest.fixture(scope="session")
def sample_corpora(tmp_path_factory):
    """Train/test corpora of standard sample photographs, as ``(train_dir, test_dir)``."""
    pytest.importorskip("skimage")
    pytest.importorskip("sklearn")
    from dualpath.samples import write_sample_corpora

    return write_sample_corpora(tmp_path_factory.mktemp("samples"))


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def criterion(request):
    """``record(number, passed, detail)``: one summary line per acceptance criterion."""
    lines = request.config._acceptance_lines

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
