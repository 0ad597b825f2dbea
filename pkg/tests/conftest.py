from collections import deque

import numpy as np
import pytest

from lungregions.synth import PhantomSpec, generate_phantom


def flood_fill_holes(mask):
    """Reference hole filling: flood the background from the border through
    4-neighbours; every background pixel the flood misses is a hole."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    reached = np.zeros_like(mask)
    queue = deque()
    for y in range(h):
        for x in range(w):
            if (y in (0, h - 1) or x in (0, w - 1)) and not mask[y, x]:
                reached[y, x] = True
                queue.append((y, x))
    while queue:
        y, x = queue.popleft()
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and not mask[ny, nx] and not reached[ny, nx]:
                reached[ny, nx] = True
                queue.append((ny, nx))
    return ~reached


def components_8(mask):
    """Reference 8-connected components as lists of (y, x), ordered by first
    pixel in raster order."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    seen = np.zeros_like(mask)
    comps = []
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y, x]:
                seen[y, x] = True
                comp, queue = [], deque([(y, x)])
                while queue:
                    cy, cx = queue.popleft()
                    comp.append((cy, cx))
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                queue.append((ny, nx))
                comps.append(comp)
    return comps


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scored_phantom():
    spec = PhantomSpec(
        image_id="scored",
        extent={"RUR": 2, "RLR": 4, "LUR": 1, "LLR": 3},
        density={"RUR": 1, "RLR": 3, "LUR": 2, "LLR": 3},
    )
    return generate_phantom(spec)


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, text in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}")
