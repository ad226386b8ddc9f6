//! File formats: PLY clouds, quad JSON, reports, loss CSV and SVG plots.

pub mod ply;
pub mod quads;
pub mod report;
pub mod svg;

pub use ply::{encode_ply, parse_ply, read_ply, write_ply, PlyFormat};
pub use quads::{load_quads, quads_from_json, quads_to_json, save_quads, QuadRecord};
pub use report::{loss_csv, write_json, write_loss_csv, Report};
pub use svg::{render_svg, write_svg, MAX_PLOT_POINTS};
