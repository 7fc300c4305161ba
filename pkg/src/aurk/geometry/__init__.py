from aurk.geometry.landmarks import Landmarks68, parse_landmarks, read_landmark_file, write_landmark_file
from aurk.geometry.layout import (BasicRoI, DerivedPoints, default_layout, derive_points,
                                  label_map, partition_basic_rois)
from aurk.geometry.raster import rasterize

__all__ = ["Landmarks68", "parse_landmarks", "read_landmark_file", "write_landmark_file",
           "BasicRoI", "DerivedPoints", "default_layout", "derive_points", "label_map",
           "partition_basic_rois", "rasterize"]
