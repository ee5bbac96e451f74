//! Cheap shared handle to a running world.
//!
//! The event loop is single-threaded by contract; the handle exists so that
//! several emulated clients and a controller can interleave against one
//! world without threading.

use std::cell::RefCell;
use std::rc::Rc;

use super::SimError;
use super::world::{DeliveredPacket, SimWorld};
use crate::types::{Endpoint, NodeId, SimTime};

#[derive(Clone)]
pub struct SimNetwork {
    inner: Rc<RefCell<SimWorld>>,
}

impl SimNetwork {
    pub fn new(world: SimWorld) -> Self {
        SimNetwork {
            inner: Rc::new(RefCell::new(world)),
        }
    }

    pub fn now(&self) -> SimTime {
        self.inner.borrow().now()
    }

    pub fn run_until(&self, t: SimTime) -> Result<(), SimError> {
        self.inner.borrow_mut().run_until(t)
    }

    pub fn step(&self) -> SimTime {
        let t = self.now() + 1;
        self.run_until(t).expect("forward step");
        t
    }

    pub fn with<R>(&self, f: impl FnOnce(&SimWorld) -> R) -> R {
        f(&self.inner.borrow())
    }

    pub fn with_mut<R>(&self, f: impl FnOnce(&mut SimWorld) -> R) -> R {
        f(&mut self.inner.borrow_mut())
    }

    pub fn attach_external(&self) -> Endpoint {
        self.inner.borrow_mut().attach_external()
    }

    pub fn send_external(&self, src: Endpoint, dst: Endpoint, bytes: Vec<u8>) {
        self.inner.borrow_mut().send_external(src, dst, bytes);
    }

    pub fn recv_external(&self, ep: Endpoint) -> Option<DeliveredPacket> {
        self.inner.borrow_mut().recv_external(ep)
    }

    pub fn entry_hints(&self, k: usize) -> Vec<Endpoint> {
        self.inner.borrow().entry_hints(k)
    }

    pub fn contains_node_id(&self, id: NodeId) -> bool {
        self.inner.borrow().contains_node_id(id)
    }
}
