pub mod dd;
pub mod gradcheck;
pub mod oracles;
pub mod zoo;
