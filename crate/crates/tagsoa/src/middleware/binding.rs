use std::collections::HashMap;
use std::sync::atomic::{AtomicU16, Ordering};
use std::sync::{Arc, Mutex};

use futures::channel::oneshot;
use tagsoa_core::{MessageKind, WireMessage};

use super::{EndpointId, MiddlewareError, Registry, ServiceDescriptor, TimestampBypass};
use crate::runtime::Clock;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BindingMode {
    /// Moves tags between the bypass and message trailers.
    Tagged,
    /// Sends no trailers and ignores received ones.
    Legacy,
}

/// An encoded message waiting to be put on the network.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Outgoing {
    pub send_time: u64,
    pub to: EndpointId,
    pub bytes: Vec<u8>,
}

/// A method invocation as seen by a skeleton.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub from: EndpointId,
    pub service_id: u16,
    pub method_id: u16,
    pub call_id: u32,
    pub payload: Vec<u8>,
    pub received_at: u64,
}

/// A response or notification as seen by the receiver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Incoming {
    pub from: EndpointId,
    pub call_id: u32,
    pub payload: Vec<u8>,
    pub received_at: u64,
}

pub type ResponseFuture = oneshot::Receiver<Incoming>;

type ResponseHandler = Box<dyn FnOnce(Incoming) + Send>;
type RequestHandler = Arc<dyn Fn(Request, Responder) + Send + Sync>;
type EventHandler = Arc<dyn Fn(Incoming) + Send + Sync>;

/// A network attachment point with its binding.
pub struct Endpoint {
    id: EndpointId,
    mode: BindingMode,
    registry: Arc<Registry>,
    bypass: Arc<TimestampBypass>,
    clock: Clock,
    outbox: Mutex<Vec<Outgoing>>,
    pending: Mutex<HashMap<u32, ResponseHandler>>,
    methods: Mutex<HashMap<(u16, u16), RequestHandler>>,
    events: Mutex<HashMap<(u16, u16), Vec<EventHandler>>>,
    next_client: AtomicU16,
}

impl Endpoint {
    pub fn new(
        id: EndpointId,
        mode: BindingMode,
        registry: Arc<Registry>,
        clock: Clock,
    ) -> Arc<Self> {
        Arc::new(Endpoint {
            id,
            mode,
            registry,
            bypass: Arc::new(TimestampBypass::new()),
            clock,
            outbox: Mutex::default(),
            pending: Mutex::default(),
            methods: Mutex::default(),
            events: Mutex::default(),
            next_client: AtomicU16::new(1),
        })
    }

    pub fn id(&self) -> EndpointId {
        self.id
    }

    pub fn mode(&self) -> BindingMode {
        self.mode
    }

    pub fn bypass(&self) -> &TimestampBypass {
        &self.bypass
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    /// Removes and returns everything sent since the last call.
    pub fn drain_outbox(&self) -> Vec<Outgoing> {
        std::mem::take(&mut *self.outbox.lock().expect("outbox lock"))
    }

    fn send(&self, recipients: &[EndpointId], mut msg: WireMessage, send_time: u64) {
        if self.mode == BindingMode::Tagged {
            msg.tag = self.bypass.take(self.id, msg.call_id).ok();
        }
        let bytes = msg.encode();
        let mut outbox = self.outbox.lock().expect("outbox lock");
        for &to in recipients {
            outbox.push(Outgoing {
                send_time,
                to,
                bytes: bytes.clone(),
            });
        }
    }

    /// Hands a received message to whatever registered for it.
    ///
    /// A tagged binding puts the trailer into the bypass right before the
    /// handler runs; anything the handler leaves there is discarded.
    pub fn deliver(
        self: &Arc<Self>,
        from: EndpointId,
        bytes: &[u8],
    ) -> Result<(), MiddlewareError> {
        let msg = match self.mode {
            BindingMode::Tagged => WireMessage::decode(bytes)?,
            BindingMode::Legacy => WireMessage::decode_ignoring_trailer(bytes)?,
        };
        let received_at = self.clock.now();
        let (service_id, id, call_id, tag) = (msg.service_id, msg.id, msg.call_id, msg.tag);
        let with_tag = |f: &mut dyn FnMut()| -> Result<(), MiddlewareError> {
            if let Some(tag) = tag {
                self.bypass.put(self.id, call_id, tag)?;
            }
            f();
            let _ = self.bypass.take(self.id, call_id);
            Ok(())
        };
        match msg.kind {
            MessageKind::Request => {
                let handler = self
                    .methods
                    .lock()
                    .expect("handler lock")
                    .get(&(service_id, id))
                    .cloned()
                    .ok_or(MiddlewareError::NoHandler { service_id, id })?;
                let responder = Responder {
                    endpoint: Arc::clone(self),
                    to: from,
                    service_id,
                    method_id: id,
                    call_id,
                };
                let request = Request {
                    from,
                    service_id,
                    method_id: id,
                    call_id,
                    payload: msg.payload,
                    received_at,
                };
                let mut once = Some((request, responder));
                with_tag(&mut || {
                    let (req, resp) = once.take().expect("handler runs once");
                    handler(req, resp)
                })
            }
            MessageKind::Response => {
                let Some(handler) = self.pending.lock().expect("pending lock").remove(&call_id)
                else {
                    return Ok(());
                };
                let mut once = Some((
                    handler,
                    Incoming {
                        from,
                        call_id,
                        payload: msg.payload,
                        received_at,
                    },
                ));
                with_tag(&mut || {
                    let (handler, incoming) = once.take().expect("handler runs once");
                    handler(incoming)
                })
            }
            MessageKind::Notification => {
                let handlers = self
                    .events
                    .lock()
                    .expect("handler lock")
                    .get(&(service_id, id))
                    .cloned()
                    .unwrap_or_default();
                for handler in handlers {
                    let incoming = Incoming {
                        from,
                        call_id,
                        payload: msg.payload.clone(),
                        received_at,
                    };
                    let mut once = Some(incoming);
                    with_tag(&mut || handler(once.take().expect("handler runs once")))?;
                }
                Ok(())
            }
        }
    }
}

/// Client side of a service.
///
/// Call ids combine a client id unique to this proxy on its endpoint with
/// a sequence number, so calls from different proxies never collide.
pub struct Proxy {
    endpoint: Arc<Endpoint>,
    service_id: u16,
    server: EndpointId,
    client_id: u16,
    seq: AtomicU16,
}

impl Proxy {
    pub fn new(endpoint: &Arc<Endpoint>, service_id: u16) -> Result<Self, MiddlewareError> {
        let server = endpoint.registry.discover(service_id)?;
        Ok(Proxy {
            endpoint: Arc::clone(endpoint),
            service_id,
            server,
            client_id: endpoint.next_client.fetch_add(1, Ordering::Relaxed),
            seq: AtomicU16::new(0),
        })
    }

    pub fn endpoint(&self) -> &Arc<Endpoint> {
        &self.endpoint
    }

    pub fn service_id(&self) -> u16 {
        self.service_id
    }

    pub fn reserve_call_id(&self) -> u32 {
        (u32::from(self.client_id) << 16) | u32::from(self.seq.fetch_add(1, Ordering::Relaxed))
    }

    /// Invokes a method; the future resolves with the response.
    pub fn call(&self, method_id: u16, args: Vec<u8>, send_time: u64) -> ResponseFuture {
        let (tx, rx) = oneshot::channel();
        let call_id = self.reserve_call_id();
        self.call_with(method_id, call_id, args, send_time, move |incoming| {
            let _ = tx.send(incoming);
        });
        rx
    }

    /// Invokes a method with a reserved call id and a response callback.
    pub fn call_with(
        &self,
        method_id: u16,
        call_id: u32,
        args: Vec<u8>,
        send_time: u64,
        on_response: impl FnOnce(Incoming) + Send + 'static,
    ) {
        self.endpoint
            .pending
            .lock()
            .expect("pending lock")
            .insert(call_id, Box::new(on_response));
        let msg = WireMessage {
            service_id: self.service_id,
            id: method_id,
            call_id,
            kind: MessageKind::Request,
            payload: args,
            tag: None,
        };
        self.endpoint.send(&[self.server], msg, send_time);
    }

    /// Receives notifications of `event_id`.
    pub fn subscribe(&self, event_id: u16, handler: impl Fn(Incoming) + Send + Sync + 'static) {
        self.endpoint
            .events
            .lock()
            .expect("handler lock")
            .entry((self.service_id, event_id))
            .or_default()
            .push(Arc::new(handler));
        self.endpoint
            .registry
            .subscribe(self.service_id, event_id, self.endpoint.id);
    }
}

/// Server side of a service.
pub struct Skeleton {
    endpoint: Arc<Endpoint>,
    descriptor: ServiceDescriptor,
    event_seq: Mutex<HashMap<u16, u32>>,
}

impl Skeleton {
    /// Registers `descriptor` as offered by `endpoint`.
    pub fn offer(
        endpoint: &Arc<Endpoint>,
        descriptor: ServiceDescriptor,
    ) -> Result<Self, MiddlewareError> {
        endpoint
            .registry
            .register_service(descriptor.clone(), endpoint.id)?;
        Ok(Skeleton {
            endpoint: Arc::clone(endpoint),
            descriptor,
            event_seq: Mutex::default(),
        })
    }

    pub fn endpoint(&self) -> &Arc<Endpoint> {
        &self.endpoint
    }

    pub fn descriptor(&self) -> &ServiceDescriptor {
        &self.descriptor
    }

    /// Binds the implementation of a method. The handler answers through
    /// the [`Responder`], now or later.
    pub fn bind(
        &self,
        method_id: u16,
        handler: impl Fn(Request, Responder) + Send + Sync + 'static,
    ) {
        self.endpoint
            .methods
            .lock()
            .expect("handler lock")
            .insert((self.descriptor.service_id, method_id), Arc::new(handler));
    }

    /// Sends a notification to all current subscribers. Returns the call
    /// id used, which counts notifications of this event.
    pub fn notify(&self, event_id: u16, payload: Vec<u8>, send_time: u64) -> u32 {
        let call_id = {
            let mut seq = self.event_seq.lock().expect("event lock");
            let slot = seq.entry(event_id).or_insert(0);
            *slot += 1;
            *slot - 1
        };
        self.notify_with_id(event_id, call_id, payload, send_time);
        call_id
    }

    /// Sends a notification under a caller-chosen call id.
    pub fn notify_with_id(&self, event_id: u16, call_id: u32, payload: Vec<u8>, send_time: u64) {
        let service_id = self.descriptor.service_id;
        let subscribers = self.endpoint.registry.subscribers(service_id, event_id);
        let msg = WireMessage {
            service_id,
            id: event_id,
            call_id,
            kind: MessageKind::Notification,
            payload,
            tag: None,
        };
        self.endpoint.send(&subscribers, msg, send_time);
    }
}

/// The promise of a pending method call.
pub struct Responder {
    endpoint: Arc<Endpoint>,
    to: EndpointId,
    service_id: u16,
    method_id: u16,
    call_id: u32,
}

impl Responder {
    pub fn call_id(&self) -> u32 {
        self.call_id
    }

    pub fn endpoint(&self) -> &Arc<Endpoint> {
        &self.endpoint
    }

    pub fn respond(self, payload: Vec<u8>, send_time: u64) {
        let msg = WireMessage {
            service_id: self.service_id,
            id: self.method_id,
            call_id: self.call_id,
            kind: MessageKind::Response,
            payload,
            tag: None,
        };
        self.endpoint.send(&[self.to], msg, send_time);
    }
}

impl std::fmt::Debug for Responder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Responder")
            .field("to", &self.to)
            .field("call_id", &self.call_id)
            .finish()
    }
}
