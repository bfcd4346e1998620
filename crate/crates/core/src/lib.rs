pub mod backend;
pub mod cli;
pub mod cosim;
pub mod fpformat;
pub mod frontend;
pub mod interp;
pub mod pipeline;
pub mod ir;
pub mod sched;
pub mod tensor;
pub mod transforms;
