//! Task definitions, scripted primitives, demonstration generation,
//! dataset persistence and the relational-coordinate transform.

mod demos;
mod io;
mod relational;
mod script;
mod spec;

pub use demos::{demo_rng, generate_dataset, run_demo, sample_spawn, Dataset, Demonstration, Segment};
pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset};
pub use relational::{from_relational, relative_to_gripper_mean, to_relational, to_relational_coordinates};
pub use script::{ease, script_primitive, Script};
pub use script::primitive_directives;
pub use spec::{PrimitiveId, PrimitiveSpec, SpawnRange, TaskKind, TaskSpec};
