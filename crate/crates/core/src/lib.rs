pub mod adapter;
pub mod agent;
pub mod board;
pub mod campaign;
pub mod clock;
pub mod cluster;
pub mod config;
pub mod dispatcher;
pub mod events;
pub mod fixtures;
pub mod gateway;
pub mod pipeline;
pub mod supervisor;
pub mod tools;
