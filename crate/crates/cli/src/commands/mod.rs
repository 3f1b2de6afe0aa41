pub mod compare;
pub mod cost;
pub mod train;
pub mod verify;
