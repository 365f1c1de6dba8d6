pub mod config;
pub mod expr;
pub mod fieldbracket;
pub mod hodograph;
pub mod report;
pub mod sampling;
pub mod tensor;
pub mod verify;
