"""Pure-numpy im2col/col2im, used when the compiled extension is unavailable."""
import numpy as np


def im2col(xp, kh, kw, sh, sw, dh, dw, oh, ow):
    """(N, C, Hp, Wp) padded input -> (N, C*kh*kw, oh*ow) patch matrix."""
    n, c, _, _ = xp.shape
    s = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, kh, kw, oh, ow),
        strides=(s[0], s[1], s[2] * dh, s[3] * dw, s[2] * sh, s[3] * sw),
        writeable=False)
    return view.reshape(n, c * kh * kw, oh * ow)


def col2im(cols, n, c, hp, wp, kh, kw, sh, sw, dh, dw, oh, ow):
    """Adjoint of :func:`im2col`: scatter-add patches back into a padded image."""
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        r0 = i * dh
        for j in range(kw):
            c0 = j * dw
            out[:, :, r0:r0 + sh * (oh - 1) + 1:sh, c0:c0 + sw * (ow - 1) + 1:sw] += cols[:, :, i, j]
    return out
