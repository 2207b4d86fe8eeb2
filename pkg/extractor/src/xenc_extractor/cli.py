"""Minimal front end: transcript/video/pairs to XEF1 stores."""

from __future__ import annotations

import argparse
import sys

from xenc.data_model import write_store
from xenc.errors import XencError

from .backends import (HFImageBackend, HFTextBackend, tiny_image_backend,
                       tiny_text_backend)
from .frames import extract_frame_features, read_video_frames
from .text import extract_text_features, read_transcript


def _text_backend(args):
    if args.model:
        return HFTextBackend.from_pretrained(args.model)
    return tiny_text_backend(seed=args.seed)


def _image_backend(args):
    if args.model:
        return HFImageBackend.from_pretrained(args.model)
    return tiny_image_backend(seed=args.seed)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="xenc-extract",
        description="Extract transformer features into XEF1 stores.")
    parser.add_argument("--model", default=None,
                        help="HF checkpoint; omitted = tiny random-init tower")
    parser.add_argument("--layer", type=int, default=0)
    parser.add_argument("--seed", type=int, default=0,
                        help="init seed for the tiny towers")
    parser.add_argument("--scan-id", default="scan")
    parser.add_argument("--out", required=True)
    sub = parser.add_subparsers(dest="command", required=True)
    p_text = sub.add_parser("text")
    p_text.add_argument("transcript", help="word<TAB>start<TAB>end per line")
    p_text.add_argument("--context-words", type=int, default=20)
    p_frames = sub.add_parser("frames")
    p_frames.add_argument("video")
    p_frames.add_argument("--segment-seconds", type=float, default=2.0)
    args = parser.parse_args(argv)

    try:
        if args.command == "text":
            transcript = read_transcript(args.transcript)
            feat = extract_text_features(transcript, _text_backend(args),
                                         args.layer,
                                         context_words=args.context_words,
                                         scan_id=args.scan_id)
        else:
            frames, fps = read_video_frames(args.video)
            feat = extract_frame_features(frames, _image_backend(args),
                                          args.layer, fps=fps,
                                          segment_seconds=args.segment_seconds,
                                          scan_id=args.scan_id)
        write_store(feat, args.out)
    except (XencError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {feat.data.shape[0]}x{feat.data.shape[1]} features to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
