//! Pipeline-parallel schedules built from repeating blocks.
//!
//! A [`BuildingBlock`] lays out the passes of one microbatch on a device x
//! time grid. Repeating it, squeezing out redundant idle cells and
//! reordering the warm-up and cool-down phases yields a full
//! [`GridSchedule`], which can then be measured for peak activation memory,
//! simulated under real pass durations and analyzed for bubble growth.
//!
//! ```
//! use pipeblock::{assemble, build_v_block, exact_peak, VVariant};
//!
//! let block = build_v_block(4, VVariant::Half).unwrap();
//! let schedule = assemble(&block, 16).unwrap();
//! assert_eq!(exact_peak(&schedule).peak, 6.0);
//! ```

pub mod assemble;
pub mod bubble;
pub mod cli;
pub mod document;
pub mod error;
pub mod gallery;
pub mod memory;
pub mod model;
pub mod render;
pub mod search;
pub mod sim;

pub use assemble::{assemble, assemble_squeezed, reorder, repeat, squeeze, CollisionReport};
pub use bubble::{growth_rate, lower_bound, min_memory_for_od_bubble, vhalf_condition, BubbleClass, GrowthReport};
pub use document::{ScheduleDocument, Units};
pub use error::{Error, Result};
pub use gallery::{build_gallery, build_v_block, build_v_block_with, list_gallery, GalleryEntry, GalleryParams, VOffsets, VVariant};
pub use memory::{check_bound, exact_peak, lifespans, peak_bound, periodic_peak, MemoryTrace};
pub use model::{
    dependencies, validate_block, BlockPass, BuildingBlock, GridSchedule, PassId, PassKind, RepeatPattern,
    RunTimeProfile, ScheduledPass, Topology,
};
pub use render::{render_svg, render_text, ColorChoice, SvgStyle, TextStyle};
pub use search::{frontier, search, FrontierPoint, MemoryLimit, SearchResult, SearchSpec};
pub use sim::{compare, simulate, SimResult};
