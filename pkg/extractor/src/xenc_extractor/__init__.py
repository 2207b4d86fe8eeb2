from .backends import (HFImageBackend, HFTextBackend, HashWordTokenizer,
                       tiny_image_backend, tiny_text_backend)
from .frames import extract_frame_features, read_video_frames
from .pairs import extract_pair_features
from .text import extract_text_features, read_transcript

__version__ = "0.1.0"
