pub mod align;
pub mod bases;
pub mod fuse;
pub mod inspect;
pub mod merge;
pub mod transform;
pub mod validate;
