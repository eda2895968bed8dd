"""Tissue class codes shared by every stage of the pipeline."""

AIR = 0
SKIN = 1
ADIPOSE = 2
GLAND = 3
VESSEL = 4
TUMOR = 5
CHEST = 6

N_CLASSES = 7

CLASS_NAMES = ("air", "skin", "adipose", "gland", "vascular", "tumor", "chest")

# Column order used by evaluation reports (air is not reported).
REPORT_CLASSES = (TUMOR, ADIPOSE, GLAND, VESSEL, SKIN, CHEST)

LATERALITIES = ("left", "right", "bilateral")
