use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

use super::{EndpointId, MiddlewareError, ServiceDescriptor};

/// In-process service discovery.
#[derive(Default)]
pub struct Registry {
    inner: Mutex<Inner>,
}

#[derive(Default)]
struct Inner {
    services: HashMap<u16, (ServiceDescriptor, EndpointId)>,
    subscribers: HashMap<(u16, u16), BTreeSet<EndpointId>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Offers a service at `endpoint`, replacing any earlier offer.
    pub fn register_service(
        &self,
        descriptor: ServiceDescriptor,
        endpoint: EndpointId,
    ) -> Result<(), MiddlewareError> {
        descriptor.validate()?;
        let mut inner = self.inner.lock().expect("registry lock");
        inner
            .services
            .insert(descriptor.service_id, (descriptor, endpoint));
        Ok(())
    }

    pub fn discover(&self, service_id: u16) -> Result<EndpointId, MiddlewareError> {
        self.inner
            .lock()
            .expect("registry lock")
            .services
            .get(&service_id)
            .map(|(_, ep)| *ep)
            .ok_or(MiddlewareError::ServiceNotFound(service_id))
    }

    pub fn descriptor(&self, service_id: u16) -> Result<ServiceDescriptor, MiddlewareError> {
        self.inner
            .lock()
            .expect("registry lock")
            .services
            .get(&service_id)
            .map(|(d, _)| d.clone())
            .ok_or(MiddlewareError::ServiceNotFound(service_id))
    }

    pub fn subscribe(&self, service_id: u16, event_id: u16, endpoint: EndpointId) {
        self.inner
            .lock()
            .expect("registry lock")
            .subscribers
            .entry((service_id, event_id))
            .or_default()
            .insert(endpoint);
    }

    /// Subscribers of an event in endpoint order.
    pub fn subscribers(&self, service_id: u16, event_id: u16) -> Vec<EndpointId> {
        self.inner
            .lock()
            .expect("registry lock")
            .subscribers
            .get(&(service_id, event_id))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }
}
