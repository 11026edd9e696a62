import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_doc_image(rng, h=64, w=64):
    """Procedural document-like page: light background, glyph bars, a color patch."""
    img = np.full((h, w, 3), 0.94, dtype=np.float32)
    img += rng.normal(0, 0.01, size=img.shape).astype(np.float32)
    n_lines = max(2, h // 12)
    for i in range(n_lines):
        y0 = int((i + 0.5) * h / n_lines)
        x0 = int(rng.integers(2, max(3, w // 6)))
        x1 = int(rng.integers(w // 2, w - 2))
        thick = int(rng.integers(1, 3))
        ink = rng.uniform(0.02, 0.25)
        img[y0:y0 + thick, x0:x1, :] = ink
    # one colored block, magazine-style
    cy, cx = int(rng.integers(0, h // 2)), int(rng.integers(0, w // 2))
    ch, cw = h // 4, w // 4
    color = rng.uniform(0.2, 0.9, size=3).astype(np.float32)
    img[cy:cy + ch, cx:cx + cw, :] = color
    return np.clip(img, 0.0, 1.0)


@pytest.fixture
def doc_image(rng):
    return make_doc_image(rng)
