"""Black-box classifier contract plus built-in reference models.

Every model exposes post-softmax/post-sigmoid confidences in [0, 1] and the
exact analytic gradient of that confidence with respect to the input image.
The built-ins are small closed-form models used for verification: a planted
bright-region detector with a known ground-truth salient area, a linear
softmax model, and a tiny convolutional net with manual backprop.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d, correlate2d

from .errors import InvalidArgumentError
from .grid import Grid


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


class ScoreModel(abc.ABC):
    """Black-box oracle: class confidence and input gradient for an image.

    score(image, c) is a deterministic confidence in [0, 1];
    input_gradient(image, c) has the same shape as the image.
    """

    input_height: int
    input_width: int
    input_channels: int
    num_classes: int

    def _check_args(self, image: Grid, class_id: int) -> None:
        if image.shape != (self.input_height, self.input_width, self.input_channels):
            raise InvalidArgumentError(
                f"image shape {image.shape} does not match model input "
                f"({self.input_height}, {self.input_width}, {self.input_channels})"
            )
        if not (0 <= class_id < self.num_classes):
            raise InvalidArgumentError(
                f"class_id {class_id} outside [0, {self.num_classes})"
            )

    @abc.abstractmethod
    def score(self, image: Grid, class_id: int) -> float:
        ...

    @abc.abstractmethod
    def input_gradient(self, image: Grid, class_id: int) -> Grid:
        ...

    def batch_score(self, images: list[Grid], class_id: int) -> np.ndarray:
        """Scores for several images of one class. Default loops; remote
        models override this with a single wire call."""
        return np.array([self.score(img, class_id) for img in images])

    def batch_input_gradient(self, images: list[Grid], class_id: int) -> list[Grid]:
        return [self.input_gradient(img, class_id) for img in images]


@dataclass(frozen=True)
class Rect:
    """Pixel-coordinate rectangle (top, left, height, width)."""

    top: int
    left: int
    height: int
    width: int

    def slices(self):
        return slice(self.top, self.top + self.height), slice(self.left, self.left + self.width)


class PlantedRegionModel(ScoreModel):
    """Sigmoid of (mean intensity inside a planted rectangle - 0.5) * sharpness.

    Class 1 is the "bright region" class; class 0 is its complement. The
    gradient is supported exactly on the rectangle, which makes this the
    desk-scale oracle with a known ground-truth salient region.
    """

    def __init__(self, input_height: int, input_width: int, input_channels: int,
                 region: Rect, sharpness: float = 8.0):
        if region.top < 0 or region.left < 0 or region.height < 1 or region.width < 1:
            raise InvalidArgumentError(f"invalid region {region}")
        if region.top + region.height > input_height or region.left + region.width > input_width:
            raise InvalidArgumentError(f"region {region} exceeds {input_height}x{input_width}")
        self.input_height = input_height
        self.input_width = input_width
        self.input_channels = input_channels
        self.num_classes = 2
        self.region = region
        self.sharpness = float(sharpness)

    def _z(self, image: Grid) -> float:
        ys, xs = self.region.slices()
        return (float(np.mean(image.data[ys, xs, :])) - 0.5) * self.sharpness

    def score(self, image: Grid, class_id: int) -> float:
        self._check_args(image, class_id)
        p1 = _sigmoid(self._z(image))
        return p1 if class_id == 1 else 1.0 - p1

    def input_gradient(self, image: Grid, class_id: int) -> Grid:
        self._check_args(image, class_id)
        z = self._z(image)
        p1 = _sigmoid(z)
        ys, xs = self.region.slices()
        n = self.region.height * self.region.width * self.input_channels
        g = np.zeros(image.shape)
        g[ys, xs, :] = self.sharpness * p1 * (1.0 - p1) / n
        if class_id == 0:
            g = -g
        return Grid(g)

    def batch_score(self, images: list[Grid], class_id: int) -> np.ndarray:
        ys, xs = self.region.slices()
        means = np.array([np.mean(img.data[ys, xs, :]) for img in images])
        z = (means - 0.5) * self.sharpness
        p1 = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                      np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        return p1 if class_id == 1 else 1.0 - p1


class LinearSoftmaxModel(ScoreModel):
    """softmax(<w_c, image> + b_c): closed-form gradients for IG verification."""

    def __init__(self, weights: np.ndarray, biases: np.ndarray):
        w = np.asarray(weights, dtype=np.float64)
        b = np.asarray(biases, dtype=np.float64)
        if w.ndim != 4:
            raise InvalidArgumentError("weights must have shape (classes, h, w, channels)")
        if b.shape != (w.shape[0],):
            raise InvalidArgumentError("biases must have shape (classes,)")
        self.weights = w
        self.biases = b
        self.num_classes = w.shape[0]
        self.input_height, self.input_width, self.input_channels = w.shape[1:]

    @staticmethod
    def random(height: int, width: int, channels: int, num_classes: int,
               seed: int, scale: float = 0.5) -> "LinearSoftmaxModel":
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, scale / (height * width * channels) ** 0.5,
                       size=(num_classes, height, width, channels))
        b = rng.normal(0.0, 0.1, size=num_classes)
        return LinearSoftmaxModel(w, b)

    def _probs(self, image: Grid) -> np.ndarray:
        logits = np.tensordot(self.weights, image.data, axes=3) + self.biases
        return _softmax(logits)

    def score(self, image: Grid, class_id: int) -> float:
        self._check_args(image, class_id)
        return float(self._probs(image)[class_id])

    def input_gradient(self, image: Grid, class_id: int) -> Grid:
        self._check_args(image, class_id)
        p = self._probs(image)
        wbar = np.tensordot(p, self.weights, axes=1)
        g = p[class_id] * (self.weights[class_id] - wbar)
        return Grid(g)


class TinyConvNetModel(ScoreModel):
    """One valid-mode conv layer + ReLU + global average pool + linear head.

    Weights are explicit numpy arrays and the input gradient is computed by
    manual backprop, so the model stays a closed-form oracle. Nonlinear on
    purpose: used to exercise the optimizer away from the linear regime and
    for the trained-vs-random sanity experiment.
    """

    def __init__(self, kernels: np.ndarray, head_w: np.ndarray, head_b: np.ndarray):
        k = np.asarray(kernels, dtype=np.float64)        # (K, kh, kw, C)
        hw = np.asarray(head_w, dtype=np.float64)        # (classes, K)
        hb = np.asarray(head_b, dtype=np.float64)        # (classes,)
        if k.ndim != 4 or hw.ndim != 2 or hw.shape[1] != k.shape[0] or hb.shape != (hw.shape[0],):
            raise InvalidArgumentError("inconsistent TinyConvNet weight shapes")
        self.kernels = k
        self.head_w = hw
        self.head_b = hb
        self.num_classes = hw.shape[0]
        self.input_channels = k.shape[3]
        # Input size is fixed at construction time.
        self.input_height = 0
        self.input_width = 0

    def with_input_size(self, height: int, width: int) -> "TinyConvNetModel":
        kh, kw = self.kernels.shape[1:3]
        if height < kh or width < kw:
            raise InvalidArgumentError("input smaller than convolution kernel")
        out = TinyConvNetModel(self.kernels, self.head_w, self.head_b)
        out.input_height = height
        out.input_width = width
        return out

    @staticmethod
    def random(height: int, width: int, channels: int, num_classes: int,
               num_kernels: int = 8, kernel_size: int = 3, seed: int = 0) -> "TinyConvNetModel":
        rng = np.random.default_rng(seed)
        k = rng.normal(0.0, 0.4, size=(num_kernels, kernel_size, kernel_size, channels))
        hw = rng.normal(0.0, 0.8, size=(num_classes, num_kernels))
        hb = np.zeros(num_classes)
        return TinyConvNetModel(k, hw, hb).with_input_size(height, width)

    def _forward(self, image: Grid):
        K, kh, kw, C = self.kernels.shape
        h_out = self.input_height - kh + 1
        w_out = self.input_width - kw + 1
        pre = np.empty((h_out, w_out, K))
        for k in range(K):
            acc = np.zeros((h_out, w_out))
            for c in range(C):
                acc += correlate2d(image.data[:, :, c], self.kernels[k, :, :, c], mode="valid")
            pre[:, :, k] = acc
        act = np.maximum(pre, 0.0)
        pooled = act.mean(axis=(0, 1))
        logits = self.head_w @ pooled + self.head_b
        probs = _softmax(logits)
        return pre, act, pooled, probs

    def min_relu_gap(self, image: Grid) -> float:
        """Smallest |pre-activation|; callers avoiding ReLU kinks check this."""
        pre, _, _, _ = self._forward(image)
        return float(np.min(np.abs(pre)))

    def score(self, image: Grid, class_id: int) -> float:
        self._check_args(image, class_id)
        return float(self._forward(image)[3][class_id])

    def _backprop_to_input(self, image: Grid, dlogits: np.ndarray) -> np.ndarray:
        pre, _, _, _ = self._forward(image)
        h_out, w_out, K = pre.shape
        dpooled = self.head_w.T @ dlogits
        dact = np.broadcast_to(dpooled / (h_out * w_out), pre.shape)
        dpre = np.where(pre > 0, dact, 0.0)
        C = self.input_channels
        g = np.zeros((self.input_height, self.input_width, C))
        for k in range(K):
            for c in range(C):
                g[:, :, c] += convolve2d(dpre[:, :, k], self.kernels[k, :, :, c], mode="full")
        return g

    def input_gradient(self, image: Grid, class_id: int) -> Grid:
        self._check_args(image, class_id)
        probs = self._forward(image)[3]
        dlogits = -probs[class_id] * probs
        dlogits[class_id] += probs[class_id]
        return Grid(self._backprop_to_input(image, dlogits))

    def train(self, images: list[Grid], labels: list[int], steps: int = 200,
              lr: float = 0.5) -> "TinyConvNetModel":
        """Plain full-batch gradient descent on cross-entropy; returns a new
        model with updated weights."""
        kern = self.kernels.copy()
        hw = self.head_w.copy()
        hb = self.head_b.copy()
        K, kh, kw, C = kern.shape
        model = TinyConvNetModel(kern, hw, hb).with_input_size(self.input_height, self.input_width)
        n = len(images)
        for _ in range(steps):
            dk = np.zeros_like(kern)
            dhw = np.zeros_like(hw)
            dhb = np.zeros_like(hb)
            for img, label in zip(images, labels):
                pre, _, pooled, probs = model._forward(img)
                h_out, w_out, _ = pre.shape
                dlogits = probs.copy()
                dlogits[label] -= 1.0
                dhw += np.outer(dlogits, pooled)
                dhb += dlogits
                dpooled = hw.T @ dlogits
                dpre = np.where(pre > 0, dpooled / (h_out * w_out), 0.0)
                for k in range(K):
                    for c in range(C):
                        # dL/dkernel is the valid correlation of the image
                        # with the upstream feature-map gradient
                        dk[k, :, :, c] += correlate2d(
                            img.data[:, :, c], dpre[:, :, k], mode="valid")
            kern -= lr * dk / n
            hw -= lr * dhw / n
            hb -= lr * dhb / n
        return model

    def accuracy(self, images: list[Grid], labels: list[int]) -> float:
        hits = 0
        for img, label in zip(images, labels):
            probs = self._forward(img)[3]
            hits += int(np.argmax(probs) == label)
        return hits / len(images)


class ConstantScoreModel(ScoreModel):
    """Returns a fixed confidence for every class; zero gradient everywhere.

    Stands in for a randomized network whose output carries no evidence."""

    def __init__(self, input_height: int, input_width: int, input_channels: int,
                 num_classes: int = 2, value: float = 0.0):
        if not (0.0 <= value <= 1.0):
            raise InvalidArgumentError("constant score must lie in [0, 1]")
        self.input_height = input_height
        self.input_width = input_width
        self.input_channels = input_channels
        self.num_classes = num_classes
        self.value = float(value)

    def score(self, image: Grid, class_id: int) -> float:
        self._check_args(image, class_id)
        return self.value

    def input_gradient(self, image: Grid, class_id: int) -> Grid:
        self._check_args(image, class_id)
        return Grid.zeros(self.input_height, self.input_width, self.input_channels)


def check_gradient(model: ScoreModel, image: Grid, class_id: int, eps: float,
                   max_coords: int = 256) -> float:
    """Max relative error between the analytic gradient and central finite
    differences over up to ``max_coords`` randomly sampled coordinates.

    Uses a fixed sampling seed so repeated calls are deterministic.
    """
    if eps <= 0:
        raise InvalidArgumentError(f"eps must be > 0, got {eps}")
    analytic = model.input_gradient(image, class_id).values
    total = image.data.size
    rng = np.random.default_rng(12345)
    if total <= max_coords:
        coords = np.arange(total)
    else:
        coords = rng.choice(total, size=max_coords, replace=False)
    base = image.values.copy()
    worst = 0.0
    for idx in coords:
        bumped = base.copy()
        bumped[idx] += eps
        f_plus = model.score(Grid.from_flat(*image.shape, bumped), class_id)
        bumped[idx] = base[idx] - eps
        f_minus = model.score(Grid.from_flat(*image.shape, bumped), class_id)
        cd = (f_plus - f_minus) / (2.0 * eps)
        rel = abs(analytic[idx] - cd) / max(1e-8, abs(cd))
        worst = max(worst, rel)
    return worst


def _parse_params(text: str) -> dict:
    out = {}
    if not text:
        return out
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if "=" not in token:
            raise InvalidArgumentError(f"bad model parameter token {token!r} (expected k=v)")
        key, val = token.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def builtin_model(spec: str) -> ScoreModel:
    """Construct a built-in model from a selector string.

    Forms: "planted:h=56,w=56,c=1,top=14,left=14,rh=14,rw=14,sharpness=12",
    "linear:h=8,w=8,c=1,classes=3,seed=0",
    "tinyconv:h=20,w=20,c=1,classes=2,seed=0,trained=0",
    "constant:h=56,w=56,c=1,value=0.0".
    """
    name, _, params_text = spec.partition(":")
    p = _parse_params(params_text)

    def geti(key, default):
        return int(p.get(key, default))

    def getf(key, default):
        return float(p.get(key, default))

    if name == "planted":
        h, w, c = geti("h", 56), geti("w", 56), geti("c", 1)
        region = Rect(geti("top", h // 4), geti("left", w // 4),
                      geti("rh", max(1, h // 4)), geti("rw", max(1, w // 4)))
        return PlantedRegionModel(h, w, c, region, sharpness=getf("sharpness", 12.0))
    if name == "linear":
        return LinearSoftmaxModel.random(
            geti("h", 8), geti("w", 8), geti("c", 1), geti("classes", 3), seed=geti("seed", 0))
    if name == "tinyconv":
        model = TinyConvNetModel.random(
            geti("h", 20), geti("w", 20), geti("c", 1), geti("classes", 2),
            num_kernels=geti("kernels", 8), seed=geti("seed", 0))
        if geti("trained", 0):
            from .synthetic import blob_training_set

            images, labels = blob_training_set(
                model.input_height, model.input_width, model.input_channels,
                count=geti("train_count", 40), seed=geti("seed", 0) + 1)
            model = model.train(images, labels, steps=geti("train_steps", 150))
        return model
    if name == "constant":
        return ConstantScoreModel(geti("h", 56), geti("w", 56), geti("c", 1),
                                  num_classes=geti("classes", 2), value=getf("value", 0.0))
    raise InvalidArgumentError(
        f"unknown builtin model {name!r} (known: planted, linear, tinyconv, constant)")
