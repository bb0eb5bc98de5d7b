"""
有限差分梯度校验

在 float64_mode 下比较反向模式梯度与中心差分，误差按范数计算。
"""

import numpy as np

from .tensor import Tensor, float64_mode
from .tape import GradTape, backward, no_grad


def relative_error(analytic, numeric):
    """‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / scale)


def analytic_gradients(fn, arrays):
    """
    反向模式梯度

    Args:
        fn: 接收若干张量、返回标量张量的函数
        arrays: 输入数组列表

    Returns:
        list[np.ndarray]: 每个输入的梯度
    """
    with float64_mode():
        with GradTape():
            tensors = [Tensor(a, requires_grad=True) for a in arrays]
            loss = fn(*tensors)
        grads = backward(loss)
    return [grads.of(t).numpy() for t in tensors]


def numerical_gradients(fn, arrays, h=1e-3):
    """
    中心差分梯度

    Args:
        fn: 同 analytic_gradients
        arrays: 输入数组列表
        h: 差分步长

    Returns:
        list[np.ndarray]: 每个输入的数值梯度
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    result = []
    with float64_mode(), no_grad():
        for index, array in enumerate(base):
            grad = np.zeros_like(array)
            flat = array.reshape(-1)
            for k in range(flat.size):
                original = flat[k]
                flat[k] = original + h
                plus = fn(*[Tensor(a) for a in base]).item()
                flat[k] = original - h
                minus = fn(*[Tensor(a) for a in base]).item()
                flat[k] = original
                grad.reshape(-1)[k] = (plus - minus) / (2 * h)
            result.append(grad)
    return result


def check_gradients(fn, arrays, h=1e-3):
    """
    校验 fn 对每个输入的梯度

    Returns:
        float: 所有输入中最大的相对误差
    """
    analytic = analytic_gradients(fn, arrays)
    numeric = numerical_gradients(fn, arrays, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
