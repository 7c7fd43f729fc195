use std::collections::BTreeSet;

use super::MiddlewareError;

/// Accessors a field offers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldDescriptor {
    pub name: String,
    pub has_get: bool,
    pub has_set: bool,
    pub has_notify: bool,
}

/// Method and event ids backing one field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FieldIds {
    pub get: Option<u16>,
    pub set: Option<u16>,
    pub notify: Option<u16>,
}

impl FieldIds {
    pub fn count(&self) -> usize {
        [self.get, self.set, self.notify]
            .iter()
            .filter(|id| id.is_some())
            .count()
    }
}

/// The interface of a service: methods, events and fields.
///
/// Fields expand to a get method, a set method and a change event. Their
/// ids are assigned after all explicitly declared ids, in declaration
/// order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceDescriptor {
    pub service_id: u16,
    pub methods: Vec<(u16, String)>,
    pub events: Vec<(u16, String)>,
    pub fields: Vec<FieldDescriptor>,
}

impl ServiceDescriptor {
    pub fn new(service_id: u16) -> Self {
        ServiceDescriptor {
            service_id,
            methods: Vec::new(),
            events: Vec::new(),
            fields: Vec::new(),
        }
    }

    pub fn method(mut self, id: u16, name: &str) -> Self {
        self.methods.push((id, name.into()));
        self
    }

    pub fn event(mut self, id: u16, name: &str) -> Self {
        self.events.push((id, name.into()));
        self
    }

    pub fn field(mut self, name: &str, has_get: bool, has_set: bool, has_notify: bool) -> Self {
        self.fields.push(FieldDescriptor {
            name: name.into(),
            has_get,
            has_set,
            has_notify,
        });
        self
    }

    /// Checks that method and event ids are unique.
    pub fn validate(&self) -> Result<(), MiddlewareError> {
        for (kind, list) in [("method", &self.methods), ("event", &self.events)] {
            let mut seen = BTreeSet::new();
            for (id, name) in list {
                if !seen.insert(*id) {
                    return Err(MiddlewareError::InvalidDescriptor(format!(
                        "{kind} id {id} of `{name}` is used twice"
                    )));
                }
            }
        }
        let mut names = BTreeSet::new();
        for f in &self.fields {
            if !names.insert(&f.name) {
                return Err(MiddlewareError::InvalidDescriptor(format!(
                    "field `{}` is declared twice",
                    f.name
                )));
            }
        }
        Ok(())
    }

    pub fn method_id(&self, name: &str) -> Option<u16> {
        lookup(&self.methods, name)
    }

    pub fn event_id(&self, name: &str) -> Option<u16> {
        lookup(&self.events, name)
    }

    /// Ids of the accessors of field `name`.
    pub fn field_ids(&self, name: &str) -> Option<FieldIds> {
        let mut next_method = self.methods.iter().map(|(id, _)| id + 1).max().unwrap_or(0);
        let mut next_event = self.events.iter().map(|(id, _)| id + 1).max().unwrap_or(0);
        for f in &self.fields {
            let take = |present: bool, next: &mut u16| {
                present.then(|| {
                    *next += 1;
                    *next - 1
                })
            };
            let ids = FieldIds {
                get: take(f.has_get, &mut next_method),
                set: take(f.has_set, &mut next_method),
                notify: take(f.has_notify, &mut next_event),
            };
            if f.name == name {
                return Some(ids);
            }
        }
        None
    }
}

fn lookup(list: &[(u16, String)], name: &str) -> Option<u16> {
    list.iter().find(|(_, n)| n == name).map(|(id, _)| *id)
}
