import torch.nn as nn

from .dlgm import _pad16, conv_bn_relu


class SmallBackbone(nn.Module):
    """Four stride-2 stages; returns stride-16 features reduced to ``out_dim``
    plus the stride-8 and stride-4 maps for the decoder skips."""

    def __init__(self, widths=(16, 32, 48, 64), out_dim=64, in_channels=3):
        super().__init__()
        w1, w2, w3, w4 = widths
        self.stage1 = nn.Sequential(conv_bn_relu(in_channels, w1, 2), conv_bn_relu(w1, w1))
        self.stage2 = nn.Sequential(conv_bn_relu(w1, w2, 2), conv_bn_relu(w2, w2))
        self.stage3 = nn.Sequential(conv_bn_relu(w2, w3, 2), conv_bn_relu(w3, w3))
        self.stage4 = nn.Sequential(conv_bn_relu(w3, w4, 2), conv_bn_relu(w4, w4))
        self.reduce = nn.Conv2d(w4, out_dim, 1)
        self.skip_dims = (w3, w2)

    def forward(self, x):
        s2 = self.stage1(_pad16(x))
        s4 = self.stage2(s2)
        s8 = self.stage3(s4)
        s16 = self.reduce(self.stage4(s8))
        return s16, [s8, s4]
