//! The 13-class indoor label set and its base colors.

pub const CLASS_COUNT: usize = 13;

pub const VOID: u8 = 0;
pub const FLOOR: u8 = 1;
pub const CEILING: u8 = 2;
pub const WALL: u8 = 3;
pub const DOOR: u8 = 4;
pub const WINDOW: u8 = 5;
pub const TABLE: u8 = 6;
pub const CHAIR: u8 = 7;
pub const BED: u8 = 8;
pub const SOFA: u8 = 9;
pub const CABINET: u8 = 10;
pub const LAMP: u8 = 11;
pub const APPLIANCE: u8 = 12;

pub const FURNITURE_CLASSES: [u8; 7] = [TABLE, CHAIR, BED, SOFA, CABINET, LAMP, APPLIANCE];

pub const CLASS_NAMES: [&str; CLASS_COUNT] = [
    "void",
    "floor",
    "ceiling",
    "wall",
    "door",
    "window",
    "table",
    "chair",
    "bed",
    "sofa",
    "cabinet",
    "lamp",
    "appliance",
];

pub const DEFAULT_PALETTE: [[u8; 3]; CLASS_COUNT] = [
    [0, 0, 0],
    [150, 110, 80],
    [230, 230, 220],
    [200, 190, 170],
    [120, 70, 40],
    [140, 190, 230],
    [160, 100, 60],
    [200, 60, 60],
    [70, 90, 180],
    [90, 150, 90],
    [180, 150, 100],
    [240, 220, 90],
    [170, 170, 180],
];
