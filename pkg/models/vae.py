"""
变分自编码器

编码器 q_θ(z|x) 输出均值与对数方差，经重参数化 z = μ + σ ⊙ ε 采样，
解码器 p_φ(x′|z) 以 sigmoid 输出 [0,1] 像素。
"""

import numpy as np

from common.errors import ShapeError, DomainError
from nnlayers import ModelParams, mse, bce
from tensorcore import Tensor, Rng, gaussian, ops
from .classifier import as_batch


def init_vae(spec, seed):
    """
    按规格初始化编码器与解码器参数 (θ, φ)

    Args:
        spec: VaeSpec
        seed: 随机种子

    Returns:
        ModelParams: 编码器与解码器共用的参数集
    """
    params = ModelParams()
    root = Rng(seed, (0,))
    spec.encoder_stack().init_params(spec.input_shape, root.split(0), params)
    spec.decoder_stack().init_params((spec.latent_dim,), root.split(1), params)
    return params


def kl_gaussian(mu, sigma):
    """
    D_KL(N(μ, σ²) ‖ N(0, I)) = ½·Σ(μ² + σ² − 1 − ln σ²)

    Args:
        mu, sigma: 同形状张量，所有元素求和

    Returns:
        Tensor: 形状 [1]

    Raises:
        DomainError: σ 含非正数
    """
    if mu.shape != sigma.shape:
        raise ShapeError(f"KL: μ {list(mu.shape)} 与 σ {list(sigma.shape)} 形状不匹配")
    if np.any(sigma.data <= 0):
        raise DomainError("KL: σ 必须为正")
    var = ops.mul(sigma, sigma)
    # ln σ² 取 2·ln σ，σ² 在 float32 下下溢时仍有限
    log_var = ops.mul(ops.log(sigma), 2.0)
    terms = ops.sub(ops.sub(ops.add(ops.mul(mu, mu), var), 1.0), log_var)
    return ops.mul(ops.sum(terms), 0.5)


def kl_from_logvar(mu, logvar):
    """对数方差参数化下的 KL：½·Σ(μ² + exp(logvar) − 1 − logvar)"""
    terms = ops.sub(ops.sub(ops.add(ops.mul(mu, mu), ops.exp(logvar)), 1.0), logvar)
    return ops.mul(ops.sum(terms), 0.5)


def vae_sample(mu, sigma, rng, clip=None):
    """
    重参数化采样 z = μ + σ ⊙ clip(ε, lo, hi)

    Args:
        mu, sigma: 同形状张量
        rng: Rng 实例
        clip: (lo, hi)，None 时使用默认区间 [−5, 5]

    Returns:
        Tensor: 对 μ 与 σ 可导的隐向量
    """
    if mu.shape != sigma.shape:
        raise ShapeError(f"采样: μ {list(mu.shape)} 与 σ {list(sigma.shape)} 形状不匹配")
    if clip is None:
        eps = gaussian(rng, mu.shape)
    else:
        eps = gaussian(rng, mu.shape, clip[0], clip[1])
    return ops.add(mu, ops.mul(sigma, eps))


class Vae:
    """绑定了参数的 VAE"""

    def __init__(self, spec, params):
        self.spec = spec
        self.params = params
        self.encoder = spec.encoder_stack()
        self.decoder = spec.decoder_stack()

    def encode_logvar(self, x, mode='eval', bound=None):
        """
        编码

        Returns:
            tuple: (μ_z, logvar) 两个 (N, d) 张量
        """
        x = as_batch(x, self.spec.input_shape)
        bound = bound if bound is not None else self.params.bind()
        h = self.encoder.forward(x, bound, mode)
        d = self.spec.latent_dim
        return ops.take_columns(h, 0, d), ops.take_columns(h, d, 2 * d)

    def encode(self, x, mode='eval', bound=None):
        """编码为 (μ_z, σ_z)，σ_z = exp(½·logvar) > 0"""
        mu, logvar = self.encode_logvar(x, mode, bound)
        return mu, ops.exp(ops.mul(logvar, 0.5))

    def decode(self, z, mode='eval', bound=None):
        """
        解码

        Args:
            z: (N, d) 隐向量

        Returns:
            Tensor: (N, H, W, C) 的 [0,1] 图像
        """
        z = z if isinstance(z, Tensor) else Tensor._wrap(np.asarray(z, dtype=np.float32))
        if z.ndim != 2 or z.shape[1] != self.spec.latent_dim:
            raise ShapeError(f"隐向量形状 {list(z.shape)} 与隐空间维度 {self.spec.latent_dim} 不符")
        bound = bound if bound is not None else self.params.bind()
        return self.decoder.forward(z, bound, mode)

    def loss(self, x, rng, mode='train', bound=None, clip=None):
        """
        β-VAE 损失（按批内样本平均）

        recon 为 ½‖x − x′‖²（mse）或逐像素 BCE 之和（bce）；
        capacity C > 0 时 KL 项替换为 β·|KL − C|。

        Returns:
            tuple: (损失张量, {'loss', 'recon', 'kl'} 浮点分量)
        """
        spec = self.spec
        x = as_batch(x, spec.input_shape)
        bound = bound if bound is not None else self.params.bind()
        clip = spec.noise_clip if clip is None else clip
        n = x.shape[0]

        mu, logvar = self.encode_logvar(x, mode, bound)
        sigma = ops.exp(ops.mul(logvar, 0.5))
        z = vae_sample(mu, sigma, rng, clip)
        x_rec = self.decode(z, mode, bound)

        if spec.recon_loss == 'mse':
            recon = ops.mul(mse(x, x_rec, reduction='sum'), 0.5 / n)
        else:
            recon = ops.mul(bce(x, x_rec, reduction='sum'), 1.0 / n)
        kl = ops.mul(kl_from_logvar(mu, logvar), 1.0 / n)

        if spec.capacity > 0:
            gap = ops.sub(kl, spec.capacity)
            kl_term = ops.mul(ops.mul(gap, ops.sign(gap)), spec.beta)
        else:
            kl_term = ops.mul(kl, spec.beta)
        total = ops.add(recon, kl_term)
        components = {'loss': total.item(), 'recon': recon.item(), 'kl': kl.item()}
        return total, components

    @classmethod
    def create(cls, spec, seed):
        return cls(spec, init_vae(spec, seed))


def vae_encode(spec, params, x):
    return Vae(spec, params).encode(x)


def vae_decode(spec, params, z):
    return Vae(spec, params).decode(z)


def vae_loss(spec, params, x, rng, mode='train'):
    """返回 (损失张量, 分量字典)"""
    return Vae(spec, params).loss(x, rng, mode)
