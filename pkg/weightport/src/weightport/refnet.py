"""Reference-architecture forward pass in torch, used to emit validation
activations for the exported weights.

Mirrors the released detector: a VGG-style encoder (64,64,64,64,128,128,128,
128 channels, 2x2 max-pool after the 2nd/4th/6th convolution), a 65-class
detector head and a 256-channel descriptor head, ReLU after every convolution
except the two head-final 1x1 layers.  Input is a [0,1] grayscale image with
no mean subtraction.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ReferenceNet(nn.Module):
    def __init__(self):
        super().__init__()
        c1, c2, c3, c4, c5, d1 = 64, 64, 128, 128, 256, 256
        self.conv1a = nn.Conv2d(1, c1, 3, 1, 1)
        self.conv1b = nn.Conv2d(c1, c1, 3, 1, 1)
        self.conv2a = nn.Conv2d(c1, c2, 3, 1, 1)
        self.conv2b = nn.Conv2d(c2, c2, 3, 1, 1)
        self.conv3a = nn.Conv2d(c2, c3, 3, 1, 1)
        self.conv3b = nn.Conv2d(c3, c3, 3, 1, 1)
        self.conv4a = nn.Conv2d(c3, c4, 3, 1, 1)
        self.conv4b = nn.Conv2d(c4, c4, 3, 1, 1)
        self.convPa = nn.Conv2d(c4, c5, 3, 1, 1)
        self.convPb = nn.Conv2d(c5, 65, 1, 1, 0)
        self.convDa = nn.Conv2d(c4, c5, 3, 1, 1)
        self.convDb = nn.Conv2d(c5, d1, 1, 1, 0)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x = F.relu(self.conv1a(x))
        x = F.max_pool2d(F.relu(self.conv1b(x)), 2, 2)
        x = F.relu(self.conv2a(x))
        x = F.max_pool2d(F.relu(self.conv2b(x)), 2, 2)
        x = F.relu(self.conv3a(x))
        x = F.max_pool2d(F.relu(self.conv3b(x)), 2, 2)
        x = F.relu(self.conv4a(x))
        x = F.relu(self.conv4b(x))
        logits = self.convPb(F.relu(self.convPa(x)))
        coarse = self.convDb(F.relu(self.convDa(x)))
        return logits, coarse
