"""
基本算子

每个算子计算前向结果，并在活动梯度带上登记反向函数。
除标量与张量之间外不做隐式广播；偏置相加使用显式的 add_bias。
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from common.errors import ShapeError, DomainError
from .tensor import Tensor, default_dtype
from .tape import current_tape

ELEMENTWISE_KINDS = ('add', 'sub', 'mul', 'div', 'neg', 'exp', 'log', 'relu',
                     'sigmoid', 'tanh', 'sign', 'clip')


def _as_tensor(value, like=None):
    """把 Python 标量或数组转换为常量张量"""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else default_dtype()
    return Tensor._wrap(np.asarray(value, dtype=dtype))


def _pair(a, b):
    """二元算子的操作数转换，标量常量沿用另一操作数的精度"""
    like = a if isinstance(a, Tensor) else (b if isinstance(b, Tensor) else None)
    return _as_tensor(a, like), _as_tensor(b, like)


def _result(data, inputs, backward_fn):
    """包装前向结果并在需要时登记到梯度带"""
    out = Tensor._wrap(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad, shape):
    """把标量广播产生的梯度归约回原形状"""
    if grad.shape == tuple(shape):
        return grad
    return np.full(shape, grad.sum(), dtype=grad.dtype)


def _check_binary(a, b, kind):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{kind}: 形状不匹配 {list(a.shape)} vs {list(b.shape)}")


# =============================================================================
# 逐元素算子
# =============================================================================

def add(a, b):
    a, b = _pair(a, b)
    _check_binary(a, b, 'add')
    shape_a, shape_b = a.shape, b.shape

    def backward_fn(g):
        return _unbroadcast(g, shape_a), _unbroadcast(g, shape_b)

    return _result(a.data + b.data, (a, b), backward_fn)


def sub(a, b):
    a, b = _pair(a, b)
    _check_binary(a, b, 'sub')
    shape_a, shape_b = a.shape, b.shape

    def backward_fn(g):
        return _unbroadcast(g, shape_a), _unbroadcast(-g, shape_b)

    return _result(a.data - b.data, (a, b), backward_fn)


def mul(a, b):
    a, b = _pair(a, b)
    _check_binary(a, b, 'mul')
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        return _unbroadcast(g * b_data, a_data.shape), _unbroadcast(g * a_data, b_data.shape)

    return _result(a_data * b_data, (a, b), backward_fn)


def div(a, b):
    a, b = _pair(a, b)
    _check_binary(a, b, 'div')
    if np.any(b.data == 0):
        raise DomainError("div: 除数包含 0")
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        return (_unbroadcast(g / b_data, a_data.shape),
                _unbroadcast(-g * a_data / (b_data * b_data), b_data.shape))

    return _result(a_data / b_data, (a, b), backward_fn)


def neg(a):
    a = _as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: 输入包含非正数")
    a_data = a.data
    return _result(np.log(a_data), (a,), lambda g: (g / a_data,))


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0).astype(a.dtype), (a,),
                   lambda g: (g * mask,))


def sigmoid(a):
    a = _as_tensor(a)
    out = expit(a.data).astype(a.dtype)
    return _result(out, (a,), lambda g: (g * out * (1 - out),))


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1 - out * out),))


def sign(a):
    """sign(0) = 0，梯度恒为 0"""
    a = _as_tensor(a)
    zeros = np.zeros(a.shape, dtype=a.dtype)
    return _result(np.sign(a.data).astype(a.dtype), (a,), lambda g: (zeros,))


def clip(a, lo, hi):
    """裁剪到 [lo, hi]；梯度在严格区间内部为 1，其余为 0"""
    a = _as_tensor(a)
    if lo > hi:
        raise DomainError(f"clip: 非法区间 [{lo}, {hi}]")
    inside = (a.data > lo) & (a.data < hi)
    out = np.clip(a.data, lo, hi).astype(a.dtype)
    return _result(out, (a,), lambda g: (g * inside,))


def elementwise(kind, a, b=None, lo=None, hi=None):
    """
    逐元素算子统一入口

    Args:
        kind: 算子名称，见 ELEMENTWISE_KINDS
        a: 第一个操作数
        b: 第二个操作数（二元算子）
        lo, hi: clip 的区间

    Returns:
        Tensor: 与输入同形状的结果
    """
    binary = {'add': add, 'sub': sub, 'mul': mul, 'div': div}
    unary = {'neg': neg, 'exp': exp, 'log': log, 'relu': relu,
             'sigmoid': sigmoid, 'tanh': tanh, 'sign': sign}
    if kind in binary:
        if b is None:
            raise ShapeError(f"{kind} 需要两个操作数")
        return binary[kind](a, b)
    if kind in unary:
        return unary[kind](a)
    if kind == 'clip':
        if lo is None or hi is None:
            raise DomainError("clip 需要 lo 与 hi")
        return clip(a, lo, hi)
    raise ValueError(f"不支持的逐元素算子: {kind}")


# =============================================================================
# 线性代数与形状
# =============================================================================

def matmul(a, b):
    """二维矩阵乘；dA = dC·Bᵀ，dB = Aᵀ·dC"""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul 只支持二维张量: {list(a.shape)} @ {list(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul 内维不匹配: {list(a.shape)} @ {list(b.shape)}")
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        return g @ b_data.T, a_data.T @ g

    return _result(a_data @ b_data, (a, b), backward_fn)


def add_bias(x, bias):
    """沿最后一维加偏置"""
    if bias.ndim != 1 or bias.shape[0] != x.shape[-1]:
        raise ShapeError(f"偏置形状 {list(bias.shape)} 与输入最后一维 {x.shape[-1]} 不匹配")
    axes = tuple(range(x.ndim - 1))

    def backward_fn(g):
        return g, g.sum(axis=axes)

    return _result(x.data + bias.data, (x, bias), backward_fn)


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    original = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"无法把 {list(original)} 变形为 {list(shape)}: {e}")
    return _result(out, (a,), lambda g: (g.reshape(original),))


def take_columns(a, start, stop):
    """取二维张量的列区间 [start, stop)"""
    if a.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"列区间 [{start}, {stop}) 超出形状 {list(a.shape)}")
    shape = a.shape

    def backward_fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _result(a.data[:, start:stop].copy(), (a,), backward_fn)


def sum(a):
    """全元素求和，64 位累加，结果形状 [1]"""
    shape = a.shape
    total = np.array([a.data.sum(dtype=np.float64)], dtype=a.dtype)
    return _result(total, (a,), lambda g: (np.full(shape, g[0], dtype=g.dtype),))


def mean(a):
    """全元素均值，结果形状 [1]"""
    shape, count = a.shape, a.size
    total = np.array([a.data.sum(dtype=np.float64) / count], dtype=a.dtype)
    return _result(total, (a,), lambda g: (np.full(shape, g[0] / count, dtype=g.dtype),))


# =============================================================================
# 卷积、池化、上采样（NHWC）
# =============================================================================

def _im2col(x, kh, kw):
    """(N,H,W,C) → (N*H*W, kh*kw*C)，'same' 填充、步长 1"""
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))
    n, h, w, c = x.shape
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * c)


def _col2im(cols, x_shape, kh, kw):
    """_im2col 的伴随：把列块累加回 (N,H,W,C)"""
    n, h, w, c = x_shape
    ph, pw = kh // 2, kw // 2
    blocks = cols.reshape(n, h, w, kh, kw, c)
    padded = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            padded[:, i:i + h, j:j + w, :] += blocks[:, :, :, i, j, :]
    return padded[:, ph:ph + h, pw:pw + w, :]


def _check_kernel(weight, channels, kind):
    kh, kw = weight.shape[0], weight.shape[1]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"{kind}: 'same' 填充只支持奇数卷积核，当前 {kh}×{kw}")
    if weight.shape[2] != channels:
        raise ShapeError(f"{kind}: 输入通道 {channels} 与卷积核 {list(weight.shape)} 不匹配")
    return kh, kw


def conv2d(x, weight):
    """
    二维卷积，'same' 填充，步长 1

    Args:
        x: 输入 (N,H,W,Cin)
        weight: 卷积核 (kh,kw,Cin,Cout)

    Returns:
        Tensor: (N,H,W,Cout)
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d 需要 NHWC 输入与 4 维卷积核: {list(x.shape)}, {list(weight.shape)}")
    kh, kw = _check_kernel(weight, x.shape[3], 'conv2d')
    n, h, w, _ = x.shape
    c_out = weight.shape[3]
    cols = _im2col(x.data, kh, kw)
    w_mat = weight.data.reshape(-1, c_out)
    out = (cols @ w_mat).reshape(n, h, w, c_out)
    x_shape, w_shape = x.shape, weight.shape

    def backward_fn(g):
        g2 = g.reshape(-1, c_out)
        grad_w = (cols.T @ g2).reshape(w_shape)
        grad_x = _col2im(g2 @ w_mat.T, x_shape, kh, kw)
        return grad_x, grad_w

    return _result(out, (x, weight), backward_fn)


def conv2d_transpose(x, weight):
    """
    转置卷积，'same' 填充，步长 1（conv2d 的伴随算子）

    Args:
        x: 输入 (N,H,W,Cin)
        weight: 卷积核 (kh,kw,Cout,Cin)

    Returns:
        Tensor: (N,H,W,Cout)
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d_transpose 需要 NHWC 输入与 4 维卷积核: {list(x.shape)}, {list(weight.shape)}")
    kh, kw = weight.shape[0], weight.shape[1]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d_transpose: 只支持奇数卷积核，当前 {kh}×{kw}")
    if weight.shape[3] != x.shape[3]:
        raise ShapeError(f"conv2d_transpose: 输入通道 {x.shape[3]} 与卷积核 {list(weight.shape)} 不匹配")
    n, h, w, c_in = x.shape
    c_out = weight.shape[2]
    w_mat = weight.data.reshape(-1, c_in)
    x2 = x.data.reshape(-1, c_in)
    out_shape = (n, h, w, c_out)
    out = _col2im(x2 @ w_mat.T, out_shape, kh, kw)
    w_shape = weight.shape

    def backward_fn(g):
        g_cols = _im2col(g, kh, kw)
        grad_x = (g_cols @ w_mat).reshape(n, h, w, c_in)
        grad_w = (g_cols.T @ x2).reshape(w_shape)
        return grad_x, grad_w

    return _result(out, (x, weight), backward_fn)


def maxpool2x2(x):
    """2×2 最大池化，梯度路由到按行主序的第一个最大值"""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2x2 需要 NHWC 输入: {list(x.shape)}")
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 需要偶数空间尺寸，当前 {h}×{w}")
    windows = x.data.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    windows = windows.reshape(n, h // 2, w // 2, c, 4)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        routed = np.zeros((n, h // 2, w // 2, c, 4), dtype=g.dtype)
        np.put_along_axis(routed, arg[..., None], g[..., None], axis=-1)
        routed = routed.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        return (routed.reshape(n, h, w, c),)

    return _result(out, (x,), backward_fn)


def upsample2x(x):
    """最近邻 2 倍上采样"""
    if x.ndim != 4:
        raise ShapeError(f"upsample2x 需要 NHWC 输入: {list(x.shape)}")
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def backward_fn(g):
        return (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return _result(out, (x,), backward_fn)


# =============================================================================
# 归一化与损失
# =============================================================================

def batchnorm(x, gamma, beta, running_mean=None, running_var=None, training=True, eps=1e-5):
    """
    沿最后一维（通道）的批归一化

    Args:
        x: 输入 (..., C)
        gamma, beta: 缩放与平移 (C,)
        running_mean, running_var: eval 模式使用的滑动统计量 (numpy 数组)
        training: True 时使用批统计量

    Returns:
        tuple: (输出张量, 批均值, 批方差)；eval 模式下后两项为 None
    """
    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batchnorm: 通道数 {channels} 与参数形状 {list(gamma.shape)} 不匹配")
    axes = tuple(range(x.ndim - 1))
    x_data, gamma_data = x.data, gamma.data

    if training:
        count = x_data.size // channels
        batch_mean = x_data.mean(axis=axes, dtype=np.float64).astype(x.dtype)
        batch_var = x_data.var(axis=axes, dtype=np.float64).astype(x.dtype)
        inv_std = (1.0 / np.sqrt(batch_var + eps)).astype(x.dtype)
        x_hat = (x_data - batch_mean) * inv_std

        def backward_fn(g):
            grad_gamma = (g * x_hat).sum(axis=axes)
            grad_beta = g.sum(axis=axes)
            g_hat = g * gamma_data
            grad_x = (inv_std / count) * (count * g_hat - g_hat.sum(axis=axes)
                                          - x_hat * (g_hat * x_hat).sum(axis=axes))
            return grad_x, grad_gamma, grad_beta

        out = _result(x_hat * gamma_data + beta.data, (x, gamma, beta), backward_fn)
        return out, batch_mean, batch_var

    inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
    x_hat = (x_data - running_mean) * inv_std

    def eval_backward_fn(g):
        return g * gamma_data * inv_std, (g * x_hat).sum(axis=axes), g.sum(axis=axes)

    out = _result(x_hat * gamma_data + beta.data, (x, gamma, beta), eval_backward_fn)
    return out, None, None


def softmax(logits):
    """数值稳定的 softmax（numpy 层面，不参与求导）"""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    shifted = data - data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, onehot, reduction='mean'):
    """
    softmax 交叉熵 −log softmax(z)[y]，减最大值稳定化

    Args:
        logits: (N, m)
        onehot: (N, m) 的 one-hot 目标（numpy 数组）
        reduction: 'mean' 或 'sum'

    Returns:
        Tensor: 形状 [1] 的损失；梯度为 softmax(z) − e_y
    """
    onehot = np.asarray(onehot)
    if logits.ndim != 2 or onehot.shape != logits.shape:
        raise ShapeError(f"交叉熵: logits {list(logits.shape)} 与目标 {list(onehot.shape)} 形状不匹配")
    if not (np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)):
        raise DomainError("交叉熵: 目标不是合法的 one-hot 向量")
    if reduction not in ('mean', 'sum'):
        raise ValueError(f"不支持的归约方式: {reduction}")

    z = logits.data.astype(np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    per_item = -(log_probs * onehot).sum(axis=1)
    scale = 1.0 / z.shape[0] if reduction == 'mean' else 1.0
    loss = np.array([per_item.sum() * scale], dtype=logits.dtype)
    probs = np.exp(log_probs)
    target = onehot.astype(np.float64)

    def backward_fn(g):
        return (((probs - target) * (g[0] * scale)).astype(logits.dtype),)

    return _result(loss, (logits,), backward_fn)


def one_hot(labels, num_classes):
    """
    整数标签转 one-hot

    Args:
        labels: 整数标签数组
        num_classes: 类别数

    Returns:
        np.ndarray: (N, num_classes) 的 float32 数组
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DomainError(f"标签超出范围 [0, {num_classes})")
    out = np.zeros((labels.size, num_classes), dtype=np.float32)
    out[np.arange(labels.size), labels] = 1.0
    return out
