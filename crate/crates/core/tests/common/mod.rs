#![allow(dead_code)]

pub mod geometry;
pub mod gradcheck;
pub mod lambda;
pub mod oracles;
pub mod planted;
pub mod tiny;
