"""AS-OCT angle-closure screening pipeline.

Grayscale AS-OCT images go through corneal boundary fitting, sliding-window
scleral-spur localization (HOG + linear SVR), and a three-branch convolutional
classifier over global / half-image / spur-patch views.  A procedural image
generator with exact ground truth makes the whole pipeline verifiable at desk
scale.
"""

__version__ = "0.1.0"
