pub mod expr;
pub mod model;
pub mod solve;
pub mod verify;
pub mod market;
