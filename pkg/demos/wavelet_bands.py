"""Show how the Haar transform splits an image, and what the wavelet
convolution does to a step edge.

    python demos/wavelet_bands.py
"""

import numpy as np

from mscvit.tensor import Tensor
from mscvit.wavelet import haar_dwt2d, wtconv

img = np.zeros((1, 1, 8, 8))
img[..., :, 3:] = 1.0          # a vertical edge between columns 2 and 3
img[..., 5:, :] += 0.5         # and a horizontal one between rows 4 and 5

bands = haar_dwt2d(Tensor(img))
np.set_printoptions(precision=2, suppress=True)
for name in ("ll", "lh", "hl", "hh"):
    band = getattr(bands, name).data[0, 0]
    print(f"{name}  energy {np.sum(band ** 2):6.2f}\n{band}\n")
print(f"input energy {np.sum(img ** 2):.2f} (the transform is orthonormal)")

# ll filter left at zero (the residual path keeps the input); a 3x3 box on the detail bands
filters = np.zeros((4, 1, 3, 3))
filters[1:, 0] = 1.0 / 9
print("\nwavelet convolution, detail bands smoothed and added back:")
print(wtconv(Tensor(img), Tensor(filters)).data[0, 0])
