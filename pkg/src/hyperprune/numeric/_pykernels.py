"""Pure-numpy im2col / col2im, used when the compiled extension is unavailable."""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(xp, k, stride, out_h, out_w):
    """Unfold a padded batch ``(B, C, Hp, Wp)`` into ``(B, C*k*k, out_h*out_w)``."""
    b, c, _, _ = xp.shape
    sb, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(b, c, k, k, out_h, out_w),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(b, c * k * k, out_h * out_w)


def col2im(cols, channels, k, stride, out_h, out_w, hp, wp):
    """Scatter-add columns back onto a padded canvas ``(B, channels, hp, wp)``.

    Accumulation order is fixed (kernel row, then kernel column) so the
    result is bitwise reproducible.
    """
    b = cols.shape[0]
    cols = cols.reshape(b, channels, k, k, out_h, out_w)
    canvas = np.zeros((b, channels, hp, wp), dtype=cols.dtype)
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for i in range(k):
        for j in range(k):
            canvas[:, :, i:i + h_span:stride, j:j + w_span:stride] += cols[:, :, i, j]
    return canvas
