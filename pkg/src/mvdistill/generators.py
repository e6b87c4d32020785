"""Differentiable toy generators, pose algebra, and the super-resolution stage.

Two generators ship:

* ``DirectImageGenerator`` — the parameter vector *is* the image; pose
  and latent are ignored.  Its Jacobian is the identity, which makes it
  the cleanest target for verifying distillation math.
* ``SymmetricToyGenerator`` — parameters form a 3-slab feature volume
  that is blended per-column by smooth functions of yaw and pitch and
  squashed through tanh.  The blend coefficients depend on yaw and the
  horizontal coordinate only through u_j = sin(yaw) * x_j with x_j
  antisymmetric about the image centre, so whenever the feature volume
  is left-right symmetric, rendering the mirrored pose equals flipping
  the render.

Both implement ``render`` and ``inject_gradient``; the latter applies
the exact vector-Jacobian product of the chosen tap point (before or
after the super-resolution stage) without any autograd framework.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import ClassVar

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .scores import check_score_tensor

TAP_PRE_SR = "pre_sr"
TAP_POST_SR = "post_sr"
_TAPS = (TAP_PRE_SR, TAP_POST_SR)


# ---------------------------------------------------------------------------
# Pose algebra
# ---------------------------------------------------------------------------


def _normalize_yaw(yaw: float) -> float:
    """Wrap into (-pi, pi]."""
    wrapped = math.remainder(yaw, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class Pose:
    """Camera pose: yaw in (-pi, pi], pitch in radians, positive radius."""

    yaw: float
    pitch: float = 0.0
    radius: float = 1.0

    def __post_init__(self) -> None:
        if not all(np.isfinite(v) for v in (self.yaw, self.pitch, self.radius)):
            raise ConfigError(f"pose fields must be finite, got {self!r}")
        if self.radius <= 0.0:
            raise ConfigError(f"pose radius must be positive, got {self.radius!r}")
        object.__setattr__(self, "yaw", _normalize_yaw(self.yaw))


def mirror_pose(p: Pose) -> Pose:
    """Yaw-symmetric partner pose: yaw -> -yaw, pitch and radius unchanged."""
    return Pose(yaw=-p.yaw, pitch=p.pitch, radius=p.radius)


def flip_horizontal(x: np.ndarray) -> np.ndarray:
    """Reverse the width axis of a (..., H, W) tensor."""
    return np.ascontiguousarray(x[..., ::-1])


def sample_latent(dim: int, psi: float, rng: np.random.Generator) -> np.ndarray:
    """Draw z ~ Normal(0, I) and truncate by scaling: psi * z."""
    if not 0.0 < psi <= 1.0:
        raise ConfigError(f"truncation psi must lie in (0, 1], got {psi!r}")
    return psi * rng.standard_normal(int(dim))


def sample_pose(
    rng: np.random.Generator,
    pitch_limit: float = 0.4,
    radius: float = 1.0,
) -> Pose:
    """Draw yaw uniform over (-pi, pi] and pitch uniform over +-pitch_limit."""
    yaw = rng.uniform(-math.pi, math.pi)
    pitch = rng.uniform(-pitch_limit, pitch_limit)
    return Pose(yaw=yaw, pitch=pitch, radius=radius)


def sample_grid_poses(
    rng: np.random.Generator,
    mode: str = "independent",
    pitch_limit: float = 0.4,
    radius: float = 1.0,
) -> list[Pose]:
    """Draw the four poses for one grid step.

    ``independent`` draws four poses independently; ``azimuth`` places
    the yaws evenly around the circle with a shared random offset and a
    shared pitch.
    """
    if mode == "independent":
        return [sample_pose(rng, pitch_limit, radius) for _ in range(4)]
    if mode == "azimuth":
        offset = rng.uniform(-math.pi, math.pi)
        pitch = rng.uniform(-pitch_limit, pitch_limit)
        return [Pose(yaw=offset + k * math.pi / 2.0, pitch=pitch, radius=radius) for k in range(4)]
    raise ConfigError(f"grid pose mode must be 'independent' or 'azimuth', got {mode!r}")


# ---------------------------------------------------------------------------
# Super-resolution stages
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _bilinear_matrix(n: int) -> np.ndarray:
    """Row-stochastic (2n, n) interpolation matrix for 2x upsampling.

    Output sample I reads the source at (I + 0.5) / 2 - 0.5, clamped to
    the valid range, so constants are preserved exactly.
    """
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0.0, n - 1.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    mat = np.zeros((2 * n, n))
    rows = np.arange(2 * n)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    mat.flags.writeable = False
    return mat


class SRStage(abc.ABC):
    """Deterministic map from the low-res render to the final render."""

    name: ClassVar[str]

    @abc.abstractmethod
    def param_count(self, channels: int) -> int: ...

    @abc.abstractmethod
    def out_shape(self, shape: tuple[int, int, int]) -> tuple[int, int, int]: ...

    @abc.abstractmethod
    def apply(self, low: np.ndarray, sr_params: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def vjp_input(self, grad: np.ndarray, low: np.ndarray, sr_params: np.ndarray) -> np.ndarray:
        """Adjoint of ``apply`` with respect to the low-res input."""

    def vjp_params(self, grad: np.ndarray, low: np.ndarray, sr_params: np.ndarray) -> np.ndarray:
        """Gradient with respect to the stage's own parameters (empty if fixed)."""
        return np.zeros(0)

    def init_params(self, channels: int) -> np.ndarray:
        return np.zeros(0)


class IdentitySR(SRStage):
    """No-op stage: the final render equals the low-res render."""

    name = "identity"

    def param_count(self, channels: int) -> int:
        return 0

    def out_shape(self, shape: tuple[int, int, int]) -> tuple[int, int, int]:
        return shape

    def apply(self, low: np.ndarray, sr_params: np.ndarray) -> np.ndarray:
        return np.array(low, dtype=np.float64)

    def vjp_input(self, grad: np.ndarray, low: np.ndarray, sr_params: np.ndarray) -> np.ndarray:
        return np.array(grad, dtype=np.float64)


class BilinearSR(SRStage):
    """Fixed separable bilinear 2x upsampler; exactly linear in its input."""

    name = "bilinear"

    def param_count(self, channels: int) -> int:
        return 0

    def out_shape(self, shape: tuple[int, int, int]) -> tuple[int, int, int]:
        c, h, w = shape
        return (c, 2 * h, 2 * w)

    def apply(self, low: np.ndarray, sr_params: np.ndarray) -> np.ndarray:
        mh = _bilinear_matrix(low.shape[1])
        mw = _bilinear_matrix(low.shape[2])
        return np.einsum("ij,cjk,lk->cil", mh, low, mw, optimize=True)

    def vjp_input(self, grad: np.ndarray, low: np.ndarray, sr_params: np.ndarray) -> np.ndarray:
        mh = _bilinear_matrix(low.shape[1])
        mw = _bilinear_matrix(low.shape[2])
        return np.einsum("ji,cjk,kl->cil", mh, grad, mw, optimize=True)


def upsample_sr(low: np.ndarray) -> np.ndarray:
    """Bilinear 2x upsampling of a (C, H, W) tensor."""
    low = check_score_tensor(low, "low")
    return BilinearSR().apply(low, np.zeros(0))


def upsample_sr_adjoint(grad: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`upsample_sr` for a (C, 2H, 2W) tensor."""
    grad = check_score_tensor(grad, "grad")
    c, h2, w2 = grad.shape
    if h2 % 2 or w2 % 2:
        raise DimensionError(f"adjoint input must have even spatial dims, got {grad.shape}")
    return BilinearSR().vjp_input(grad, np.zeros((c, h2 // 2, w2 // 2)), np.zeros(0))


class ConvSR(SRStage):
    """Learnable stage: bilinear 2x followed by a 3x3 convolution.

    Kernel weights live at the tail of the generator's parameter vector
    as a (C, C, 3, 3) block; zero padding keeps the spatial size.
    """

    name = "conv"

    def param_count(self, channels: int) -> int:
        return channels * channels * 9

    def out_shape(self, shape: tuple[int, int, int]) -> tuple[int, int, int]:
        c, h, w = shape
        return (c, 2 * h, 2 * w)

    def init_params(self, channels: int) -> np.ndarray:
        kernel = np.zeros((channels, channels, 3, 3))
        for c in range(channels):
            kernel[c, c, 1, 1] = 1.0
        return kernel.ravel()

    def _kernel(self, sr_params: np.ndarray, channels: int) -> np.ndarray:
        return sr_params.reshape(channels, channels, 3, 3)

    def _conv(self, x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
        c, h, w = x.shape
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        out = np.zeros((kernel.shape[0], h, w))
        for di in range(3):
            for dj in range(3):
                window = padded[:, di : di + h, dj : dj + w]
                out += np.einsum("oi,ihw->ohw", kernel[:, :, di, dj], window)
        return out

    def apply(self, low: np.ndarray, sr_params: np.ndarray) -> np.ndarray:
        up = BilinearSR().apply(low, np.zeros(0))
        return self._conv(up, self._kernel(sr_params, low.shape[0]))

    def vjp_input(self, grad: np.ndarray, low: np.ndarray, sr_params: np.ndarray) -> np.ndarray:
        kernel = self._kernel(sr_params, low.shape[0])
        c, h, w = grad.shape
        padded = np.pad(grad, ((0, 0), (1, 1), (1, 1)))
        grad_up = np.zeros_like(grad)
        for di in range(3):
            for dj in range(3):
                window = padded[:, 2 - di : 2 - di + h, 2 - dj : 2 - dj + w]
                grad_up += np.einsum("oi,ohw->ihw", kernel[:, :, di, dj], window)
        return BilinearSR().vjp_input(grad_up, low, np.zeros(0))

    def vjp_params(self, grad: np.ndarray, low: np.ndarray, sr_params: np.ndarray) -> np.ndarray:
        up = BilinearSR().apply(low, np.zeros(0))
        c, h, w = grad.shape
        padded = np.pad(up, ((0, 0), (1, 1), (1, 1)))
        dk = np.zeros((grad.shape[0], up.shape[0], 3, 3))
        for di in range(3):
            for dj in range(3):
                window = padded[:, di : di + h, dj : dj + w]
                dk[:, :, di, dj] = np.einsum("ohw,ihw->oi", grad, window)
        return dk.ravel()


_SR_STAGES = {cls.name: cls for cls in (IdentitySR, BilinearSR, ConvSR)}


def make_sr_stage(name: str) -> SRStage:
    if name not in _SR_STAGES:
        raise ConfigError(f"generator.sr must be one of {sorted(_SR_STAGES)}, got {name!r}")
    return _SR_STAGES[name]()


# ---------------------------------------------------------------------------
# Generator contract
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorParams:
    """Flat trainable parameter vector plus latent/truncation metadata."""

    theta: np.ndarray
    latent_dim: int
    truncation_psi: float = 0.8

    def __post_init__(self) -> None:
        theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if theta.ndim != 1:
            raise DimensionError(f"theta must be a flat vector, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise NumericError("theta contains non-finite entries")
        object.__setattr__(self, "theta", theta)
        if not 0.0 < self.truncation_psi <= 1.0:
            raise ConfigError(f"truncation_psi must lie in (0, 1], got {self.truncation_psi!r}")

    def with_theta(self, theta: np.ndarray) -> "GeneratorParams":
        return GeneratorParams(theta=theta, latent_dim=self.latent_dim, truncation_psi=self.truncation_psi)


@dataclass(frozen=True)
class RenderOutput:
    """Pre-SR and post-SR renders of one pose."""

    low_res: np.ndarray
    high_res: np.ndarray
    pose: Pose


class Generator(abc.ABC):
    """Deterministic differentiable generator with a pre/post-SR gradient tap."""

    kind: ClassVar[str]

    def __init__(
        self,
        channels: int = 4,
        height: int = 16,
        width: int = 16,
        latent_dim: int = 8,
        sr: SRStage | None = None,
    ) -> None:
        if min(channels, height, width) < 1:
            raise ConfigError(f"generator dims must be positive, got ({channels}, {height}, {width})")
        if latent_dim < 0:
            raise ConfigError(f"latent_dim must be >= 0, got {latent_dim}")
        self.channels = int(channels)
        self.height = int(height)
        self.width = int(width)
        self.latent_dim = int(latent_dim)
        self.sr = sr if sr is not None else BilinearSR()

    @property
    def low_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    @property
    def high_shape(self) -> tuple[int, int, int]:
        return self.sr.out_shape(self.low_shape)

    @property
    @abc.abstractmethod
    def core_param_count(self) -> int: ...

    @property
    def param_count(self) -> int:
        return self.core_param_count + self.sr.param_count(self.channels)

    def _split_theta(self, params: GeneratorParams) -> tuple[np.ndarray, np.ndarray]:
        theta = params.theta
        if theta.shape != (self.param_count,):
            raise DimensionError(
                f"{self.kind} expects {self.param_count} parameters, got {theta.shape[0]}"
            )
        return theta[: self.core_param_count], theta[self.core_param_count :]

    def _check_latent(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent, dtype=np.float64)
        if latent.shape != (self.latent_dim,):
            raise DimensionError(f"latent must have length {self.latent_dim}, got shape {latent.shape}")
        return latent

    @abc.abstractmethod
    def _render_low(self, core: np.ndarray, latent: np.ndarray, pose: Pose) -> np.ndarray: ...

    @abc.abstractmethod
    def _vjp_low(
        self, core: np.ndarray, latent: np.ndarray, pose: Pose, grad_low: np.ndarray
    ) -> np.ndarray: ...

    def init_params(
        self,
        rng: np.random.Generator,
        init: str = "normal",
        scale: float = 0.3,
        value: float = 0.0,
        truncation_psi: float = 0.8,
    ) -> GeneratorParams:
        n = self.core_param_count
        if init == "zeros":
            core = np.zeros(n)
        elif init == "constant":
            core = np.full(n, float(value))
        elif init == "normal":
            core = scale * rng.standard_normal(n)
        else:
            raise ConfigError(f"generator.init must be 'zeros', 'constant' or 'normal', got {init!r}")
        theta = np.concatenate([core, self.sr.init_params(self.channels)])
        return GeneratorParams(theta=theta, latent_dim=self.latent_dim, truncation_psi=truncation_psi)

    def render(self, params: GeneratorParams, latent: np.ndarray, pose: Pose) -> RenderOutput:
        core, sr_params = self._split_theta(params)
        latent = self._check_latent(latent)
        low = self._render_low(core, latent, pose)
        high = self.sr.apply(low, sr_params)
        return RenderOutput(low_res=low, high_res=high, pose=pose)

    def inject_gradient(
        self,
        params: GeneratorParams,
        latent: np.ndarray,
        pose: Pose,
        grad: np.ndarray,
        tap: str,
    ) -> np.ndarray:
        """Vector-Jacobian product of the tap-point render: grad^T d(render)/d(theta)."""
        if tap not in _TAPS:
            raise ConfigError(f"tap must be one of {_TAPS}, got {tap!r}")
        core, sr_params = self._split_theta(params)
        latent = self._check_latent(latent)
        grad = np.asarray(grad, dtype=np.float64)
        expected = self.low_shape if tap == TAP_PRE_SR else self.high_shape
        if grad.shape != expected:
            raise DimensionError(f"{tap} gradient must have shape {expected}, got {grad.shape}")
        if tap == TAP_POST_SR:
            low = self._render_low(core, latent, pose)
            grad_low = self.sr.vjp_input(grad, low, sr_params)
            grad_sr = self.sr.vjp_params(grad, low, sr_params)
        else:
            grad_low = grad
            grad_sr = np.zeros(self.sr.param_count(self.channels))
        grad_core = self._vjp_low(core, latent, pose, grad_low)
        return np.concatenate([grad_core, grad_sr])


class DirectImageGenerator(Generator):
    """theta is the image: pose- and latent-invariant identity render."""

    kind = "direct_image"

    @property
    def core_param_count(self) -> int:
        return self.channels * self.height * self.width

    def _render_low(self, core: np.ndarray, latent: np.ndarray, pose: Pose) -> np.ndarray:
        return core.reshape(self.low_shape).copy()

    def _vjp_low(
        self, core: np.ndarray, latent: np.ndarray, pose: Pose, grad_low: np.ndarray
    ) -> np.ndarray:
        return grad_low.ravel().copy()


class SymmetricToyGenerator(Generator):
    """Three-slab feature volume blended per-column by yaw/pitch, then tanh.

    With V = theta reshaped to (C, H, W, 3), u_j = sin(yaw) * x_j for the
    centred horizontal coordinate x_j, and per-slab blend weights
    a_s(u, pitch) bounded inside [0.2, 0.8]:

        low[c, i, j] = tanh(gain * sum_s a_s(u_j, pitch) * V[c, i, j, s])

    where gain couples the latent (spatially uniform, pose-free) and the
    camera radius.  Because u_j(-yaw) = u_{W-1-j}(yaw), a left-right
    symmetric V renders the mirrored pose as the flipped render.
    """

    kind = "symmetric_toy"

    SLABS = 3
    _FREQ = np.array([2.3, -1.7, 0.9])
    _PITCH_COEF = np.array([0.8, -1.1, 1.9])
    _PHASE = np.array([0.4, 2.0, -1.2])

    @property
    def core_param_count(self) -> int:
        return self.channels * self.height * self.width * self.SLABS

    def _volume(self, core: np.ndarray) -> np.ndarray:
        return core.reshape(self.channels, self.height, self.width, self.SLABS)

    def _column_coord(self) -> np.ndarray:
        j = np.arange(self.width, dtype=np.float64)
        half = (self.width - 1) / 2.0
        return (j - half) / max(self.width - 1, 1)

    def _blend(self, pose: Pose) -> np.ndarray:
        """Per-slab, per-column blend weights, shape (SLABS, W)."""
        u = np.sin(pose.yaw) * self._column_coord()
        phase = self._FREQ[:, None] * u[None, :] + (self._PITCH_COEF * pose.pitch + self._PHASE)[:, None]
        return 0.5 + 0.3 * np.cos(phase)

    def _gain(self, latent: np.ndarray, pose: Pose) -> float:
        latent_gain = 1.0 if latent.size == 0 else 1.0 + 0.2 * math.tanh(float(latent.mean()))
        return latent_gain / pose.radius

    def _render_low(self, core: np.ndarray, latent: np.ndarray, pose: Pose) -> np.ndarray:
        blend = self._blend(pose)
        pre = self._gain(latent, pose) * np.einsum("sj,cijs->cij", blend, self._volume(core))
        return np.tanh(pre)

    def _vjp_low(
        self, core: np.ndarray, latent: np.ndarray, pose: Pose, grad_low: np.ndarray
    ) -> np.ndarray:
        blend = self._blend(pose)
        low = self._render_low(core, latent, pose)
        scaled = grad_low * (1.0 - low * low) * self._gain(latent, pose)
        return np.einsum("cij,sj->cijs", scaled, blend).ravel()

    def init_params(
        self,
        rng: np.random.Generator,
        init: str = "normal",
        scale: float = 0.3,
        value: float = 0.0,
        truncation_psi: float = 0.8,
        symmetric: bool = True,
    ) -> GeneratorParams:
        params = super().init_params(rng, init=init, scale=scale, value=value, truncation_psi=truncation_psi)
        if symmetric:
            params = params.with_theta(self.symmetrize_theta(params.theta))
        return params

    def symmetrize_theta(self, theta: np.ndarray) -> np.ndarray:
        """Average the feature volume with its left-right flip."""
        core, sr_params = theta[: self.core_param_count], theta[self.core_param_count :]
        vol = self._volume(core)
        sym = 0.5 * (vol + vol[:, :, ::-1, :])
        return np.concatenate([sym.ravel(), sr_params])

    def mirror_theta(self, theta: np.ndarray) -> np.ndarray:
        """Flip the feature volume (and any conv kernels) left-right."""
        core, sr_params = theta[: self.core_param_count], theta[self.core_param_count :]
        flipped = np.ascontiguousarray(self._volume(core)[:, :, ::-1, :]).ravel()
        if sr_params.size:
            kernel = sr_params.reshape(self.channels, self.channels, 3, 3)
            sr_params = np.ascontiguousarray(kernel[:, :, :, ::-1]).ravel()
        return np.concatenate([flipped, sr_params])


_GENERATORS = {cls.kind: cls for cls in (DirectImageGenerator, SymmetricToyGenerator)}


def make_generator(
    kind: str,
    channels: int = 4,
    height: int = 16,
    width: int = 16,
    latent_dim: int = 8,
    sr: str = "bilinear",
) -> Generator:
    if kind not in _GENERATORS:
        raise ConfigError(f"generator.kind must be one of {sorted(_GENERATORS)}, got {kind!r}")
    return _GENERATORS[kind](
        channels=channels, height=height, width=width, latent_dim=latent_dim, sr=make_sr_stage(sr)
    )
