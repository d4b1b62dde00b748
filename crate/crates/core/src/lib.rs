pub mod action;
pub mod audio;
pub mod dataset;
pub mod decision;
pub mod eval;
pub mod numerics;
pub mod perception;
pub mod pipeline;
