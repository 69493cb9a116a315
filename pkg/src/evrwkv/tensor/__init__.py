from .gradcheck import check_gradients, finite_difference_gradient, relative_error
from .nn import Conv2d, ConvTranspose2d, DepthwiseConv2d, LayerNorm, Linear, Module, param, uniform_init
from .ops import avg_pool2, bilinear_sample, conv2d, conv_transpose2d, depthwise_conv2d, layer_norm, matmul, maximum
from .value import Value, as_value, concat, grad_enabled, no_grad, split, stack

__all__ = [
    "Value", "as_value", "concat", "stack", "split", "no_grad", "grad_enabled",
    "matmul", "conv2d", "depthwise_conv2d", "conv_transpose2d", "layer_norm", "bilinear_sample",
    "avg_pool2", "maximum",
    "Module", "Conv2d", "ConvTranspose2d", "DepthwiseConv2d", "Linear", "LayerNorm", "param", "uniform_init",
    "finite_difference_gradient", "check_gradients", "relative_error",
]
