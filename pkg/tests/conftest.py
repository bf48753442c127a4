import numpy as np
import pytest

from patchattack import spnet
from patchattack.geometry import Homography
from patchattack.imagecore import ImageBuffer


def make_weights(
    seed: int,
    wscale: float = 0.7,
    bias_mean: float = 0.2,
    bias_std: float = 0.2,
    dustbin_bias: float | None = None,
) -> spnet.WeightSet:
    """Seeded random weights; He-style fan-in scaling keeps activations sane.

    dustbin_bias, when set, overrides the detector head's 65th bias so a
    featureless input mostly lands in the "no feature" class (the behaviour
    a trained detector exhibits).
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in spnet.shape_table().items():
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            tensors[name] = rng.normal(0.0, wscale * (2.0 / fan_in) ** 0.5, size=shape)
        else:
            tensors[name] = rng.normal(bias_mean, bias_std, size=shape)
    if dustbin_bias is not None:
        tensors["detB.b"][spnet.DUSTBIN] = dustbin_bias
    return spnet.WeightSet(tensors)


def zero_weights() -> spnet.WeightSet:
    return spnet.WeightSet({k: np.zeros(v) for k, v in spnet.shape_table().items()})


def random_homography(rng: np.random.Generator, width: float = 640, height: float = 480) -> Homography:
    """Well-conditioned viewpoint-like transform around the frame center."""
    cx, cy = width / 2.0, height / 2.0
    ang = rng.uniform(-0.25, 0.25)
    s = rng.uniform(0.8, 1.25)
    tx, ty = rng.uniform(-20, 20, size=2)
    px, py = rng.uniform(-1e-4, 1e-4, size=2)
    rot = np.array([[np.cos(ang), -np.sin(ang), 0], [np.sin(ang), np.cos(ang), 0], [0, 0, 1]])
    scale = np.diag([s, s, 1.0])
    trans = np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1.0]])
    persp = np.array([[1, 0, 0], [0, 1, 0], [px, py, 1.0]])
    to_center = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
    from_center = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1.0]])
    return Homography(from_center @ persp @ trans @ rot @ scale @ to_center)


def random_gray(rng: np.random.Generator, width: int, height: int, smooth: bool = False) -> ImageBuffer:
    data = rng.uniform(0.0, 1.0, size=(height, width))
    if smooth:
        from scipy import ndimage

        data = ndimage.gaussian_filter(data, 2.0)
        lo, hi = data.min(), data.max()
        data = (data - lo) / max(hi - lo, 1e-9)
    return ImageBuffer(data[:, :, None])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
