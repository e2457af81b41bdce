#![allow(dead_code)]

pub mod criteria;
pub mod fixtures;
pub mod gradcheck;
pub mod oracles;
pub mod scalar_losses;
