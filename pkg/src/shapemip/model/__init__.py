"""Mixed-integer SOCP model of the matching problem."""
from .blocks import (MatchConfig, ProblemData, Solution, VariableLayout, add_distortion,
                     add_injectivity, add_outlier_block, assemble, decode, designated_faces,
                     distortion_pairs, encode, norm_weights)
from .conic import Cone, ConicModel, ModelBuilder, ModelError, Sos2Group
from .so3 import build_so3_block, codes_for_rotation, gray_codes, pwl_square, sos2_weights

__all__ = [
    "Cone", "ConicModel", "MatchConfig", "ModelBuilder", "ModelError", "ProblemData", "Solution",
    "Sos2Group", "VariableLayout", "add_distortion", "add_injectivity", "add_outlier_block",
    "assemble", "build_so3_block", "codes_for_rotation", "decode", "designated_faces",
    "distortion_pairs", "encode", "gray_codes", "norm_weights", "pwl_square", "sos2_weights",
]
