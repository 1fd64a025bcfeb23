//! The SmartMart application: four actor types (Customer, Group_Manager,
//! Store_Section, nondurable Cart) with their relational schemas, the
//! demand-normalized variable discount, and the synthetic store loader.

use crate::addr::ActorAddress;
use crate::engine::{ActorTypeDef, Engine, MethodCtx, MethodDescriptor, ParamType, ReturnType};
use crate::error::{EngineError, Result};
use crate::relstore::{Predicate, Schema, WindowStats};
use crate::value::{ColumnType, Value};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub const CUSTOMER: &str = "Customer";
pub const GROUP_MANAGER: &str = "Group_Manager";
pub const STORE_SECTION: &str = "Store_Section";
pub const CART: &str = "Cart";

/// Variable-discount parameters and inventory replenishment behavior.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DiscountParams {
    /// Weight of the standard deviation in the target purchase quantity.
    pub c: f64,
    /// Recency window size over purchase history.
    pub k: usize,
    /// Quantity installed when stock cannot cover an order.
    pub replenish_quantity: i64,
    /// Disabled for conservation audits: stock simply decrements.
    pub replenish_enabled: bool,
}

impl Default for DiscountParams {
    fn default() -> Self {
        DiscountParams {
            c: 1.0,
            k: 150,
            replenish_quantity: 10_000,
            replenish_enabled: true,
        }
    }
}

/// The demand-normalized variable discount: the current purchase quantity
/// over a target quantity (window mean plus `c` standard deviations),
/// scaled by the item's predefined variable discount. An empty window
/// means no demand signal and yields zero.
pub fn variable_discount(quantity: i64, stats: &WindowStats, vd: f64, c: f64) -> f64 {
    if stats.window_count == 0 {
        return 0.0;
    }
    quantity as f64 / (stats.mean + c * stats.sample_stddev) * vd
}

/// Application-pluggable password check; byte equality by default.
pub type ValidateFn = Arc<dyn Fn(&str, &str) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct SmartMartOptions {
    pub params: DiscountParams,
    pub validate: ValidateFn,
}

impl Default for SmartMartOptions {
    fn default() -> Self {
        SmartMartOptions {
            params: DiscountParams::default(),
            validate: Arc::new(|given, stored| given == stored),
        }
    }
}

impl SmartMartOptions {
    pub fn with_params(params: DiscountParams) -> SmartMartOptions {
        SmartMartOptions {
            params,
            ..Default::default()
        }
    }
}

fn customer_schemas() -> Vec<Schema> {
    vec![
        Schema::new(
            "customer_info",
            vec![("cust_name", ColumnType::Str), ("c_g_id", ColumnType::Int)],
        )
        .unwrap(),
        Schema::new(
            "store_visits",
            vec![
                ("store_id", ColumnType::Int),
                ("time", ColumnType::Timestamp),
                ("amount", ColumnType::Float),
                ("fixed_disc", ColumnType::Float),
                ("var_disc", ColumnType::Float),
            ],
        )
        .unwrap(),
        Schema::new("passwd", vec![("enc_passwd", ColumnType::Str)])
            .unwrap()
            .encrypted(),
    ]
}

fn group_manager_schemas() -> Vec<Schema> {
    vec![Schema::new(
        "discounts",
        vec![("i_id", ColumnType::Int), ("fixed_disc", ColumnType::Float)],
    )
    .unwrap()
    .with_index("i_id")]
}

fn store_section_schemas() -> Vec<Schema> {
    vec![
        Schema::new(
            "inventory",
            vec![
                ("i_id", ColumnType::Int),
                ("i_price", ColumnType::Float),
                ("i_min_price", ColumnType::Float),
                ("i_quantity", ColumnType::Int),
                ("i_var_disc", ColumnType::Float),
            ],
        )
        .unwrap()
        .with_index("i_id"),
        Schema::new(
            "purchase_history",
            vec![
                ("i_id", ColumnType::Int),
                ("time", ColumnType::Timestamp),
                ("i_quantity", ColumnType::Int),
                ("c_id", ColumnType::Int),
            ],
        )
        .unwrap()
        .with_index("i_id"),
    ]
}

fn cart_schemas() -> Vec<Schema> {
    vec![
        Schema::new(
            "cart_info",
            vec![
                ("c_id", ColumnType::Int),
                ("store_id", ColumnType::Int),
                ("session_id", ColumnType::Int),
            ],
        )
        .unwrap(),
        Schema::new(
            "cart_purchases",
            vec![
                ("sec_id", ColumnType::Int),
                ("session_id", ColumnType::Int),
                ("i_id", ColumnType::Int),
                ("i_quantity", ColumnType::Int),
                ("i_fixed_disc", ColumnType::Float),
                ("i_min_price", ColumnType::Float),
                ("i_price", ColumnType::Float),
            ],
        )
        .unwrap()
        .with_index("session_id"),
    ]
}

fn get_customer_info(ctx: &MethodCtx) -> Result<Value> {
    let rows = ctx.relation("customer_info")?.scan(&Predicate::True, None)?;
    let row = rows
        .into_iter()
        .next()
        .ok_or_else(|| EngineError::Application("customer_info is empty".into()))?;
    Ok(Value::Tuple(row))
}

fn add_store_visit(ctx: &MethodCtx) -> Result<Value> {
    let tuple = vec![
        Value::Int(ctx.int_arg(0)?),
        Value::Timestamp(ctx.ts_arg(1)?),
        Value::Float(ctx.float_arg(2)?),
        Value::Float(ctx.float_arg(3)?),
        Value::Float(ctx.float_arg(4)?),
    ];
    ctx.relation("store_visits")?.insert(tuple)?;
    Ok(Value::Unit)
}

fn authenticate(ctx: &MethodCtx, validate: &ValidateFn) -> Result<Value> {
    let given = ctx.str_arg(0)?.to_string();
    let rows = ctx.relation("passwd")?.scan(&Predicate::True, None)?;
    let stored = rows
        .first()
        .and_then(|r| r[0].as_str())
        .unwrap_or("")
        .to_string();
    Ok(Value::Bool(validate(&given, &stored)))
}

fn get_fixed_discounts(ctx: &MethodCtx) -> Result<Value> {
    let ids: Vec<Value> = ctx.list_arg(0)?.to_vec();
    let rows = ctx
        .relation("discounts")?
        .scan(&Predicate::in_list("i_id", ids), None)?;
    Ok(Value::List(rows.into_iter().map(Value::Tuple).collect()))
}

fn get_price(ctx: &MethodCtx) -> Result<Value> {
    let ids: Vec<Value> = ctx.list_arg(0)?.to_vec();
    let rows = ctx.relation("inventory")?.scan(
        &Predicate::in_list("i_id", ids),
        Some(&["i_id", "i_price", "i_min_price"]),
    )?;
    Ok(Value::List(rows.into_iter().map(Value::Tuple).collect()))
}

fn get_variable_discount_update_inventory(
    ctx: &MethodCtx,
    params: &DiscountParams,
) -> Result<Value> {
    let c_id = ctx.int_arg(0)?;
    let c_time = ctx.ts_arg(1)?;
    let ord_items = ctx.list_arg(2)?.to_vec();
    if ord_items.is_empty() {
        return Err(EngineError::Application("empty ord_items".into()));
    }

    struct OrdItem {
        i_id: i64,
        quantity: i64,
        price: f64,
        fixed_disc: f64,
        min_price: f64,
    }
    let mut items = Vec::with_capacity(ord_items.len());
    for v in &ord_items {
        let t = v
            .as_tuple()
            .ok_or_else(|| EngineError::TypeMismatch("ord_items entries must be tuples".into()))?;
        items.push(OrdItem {
            i_id: t[0].as_int().ok_or_else(|| bad_ord_item())?,
            quantity: t[1].as_int().ok_or_else(|| bad_ord_item())?,
            price: t[2].as_float().ok_or_else(|| bad_ord_item())?,
            fixed_disc: t[3].as_float().ok_or_else(|| bad_ord_item())?,
            min_price: t[4].as_float().ok_or_else(|| bad_ord_item())?,
        });
    }
    let ids: Vec<i64> = items.iter().map(|i| i.i_id).collect();

    let inventory = ctx.relation("inventory")?;
    let inv_rows = inventory.scan(
        &Predicate::in_list("i_id", ids.iter().map(|&i| Value::Int(i)).collect()),
        Some(&["i_id", "i_quantity", "i_var_disc"]),
    )?;
    let mut stock: std::collections::HashMap<i64, (i64, f64)> = std::collections::HashMap::new();
    for r in &inv_rows {
        stock.insert(
            r[0].as_int().unwrap(),
            (r[1].as_int().unwrap(), r[2].as_float().unwrap()),
        );
    }

    // Window statistics over the pre-purchase history for every ordered
    // item, before any of this order's rows are recorded.
    let history = ctx.relation("purchase_history")?;
    let stats = history.window_stats("i_id", "time", "i_quantity", params.k, &ids)?;
    let stats_by_id: std::collections::HashMap<i64, &WindowStats> =
        stats.iter().map(|s| (s.key, s)).collect();

    let mut amount = 0.0f64;
    let mut fixed_total = 0.0f64;
    let mut var_total = 0.0f64;
    for item in &items {
        let (_, vd) = *stock
            .get(&item.i_id)
            .ok_or(EngineError::UnknownItem(item.i_id))?;
        let vdisc = variable_discount(item.quantity, stats_by_id[&item.i_id], vd, params.c);
        let q = item.quantity as f64;
        if item.price > item.fixed_disc + vdisc {
            amount += (item.price - item.fixed_disc - vdisc) * q;
            var_total += vdisc * q;
        } else {
            // Discounts would overshoot: charge the minimum price and
            // grant whatever discount remains above it.
            amount += item.min_price * q;
            var_total += (item.price - item.min_price - item.fixed_disc) * q;
        }
        fixed_total += item.fixed_disc * q;
    }

    for item in &items {
        let (current, _) = stock[&item.i_id];
        let new_quantity = if current > item.quantity {
            current - item.quantity
        } else if params.replenish_enabled {
            params.replenish_quantity
        } else {
            current - item.quantity
        };
        inventory.update(
            &Predicate::eq("i_id", Value::Int(item.i_id)),
            &[("i_quantity", Value::Int(new_quantity))],
        )?;
        history.insert(vec![
            Value::Int(item.i_id),
            Value::Timestamp(c_time),
            Value::Int(item.quantity),
            Value::Int(c_id),
        ])?;
    }

    Ok(Value::Tuple(vec![
        Value::Float(amount),
        Value::Float(fixed_total),
        Value::Float(var_total),
    ]))
}

fn bad_ord_item() -> EngineError {
    EngineError::TypeMismatch("ord_items tuple must be (i_id, i_quantity, i_price, i_fixed_disc, i_min_price)".into())
}

fn add_items(ctx: &MethodCtx) -> Result<Value> {
    let orders = ctx.list_arg(0)?.to_vec();
    let o_c_id = ctx.int_arg(1)?;

    // Organize the ordered item ids by store section, preserving first
    // appearance order; (sec_id, i_id) pairs must be unique and
    // quantities positive.
    let mut section_order: Vec<String> = Vec::new();
    let mut by_section: std::collections::HashMap<String, Vec<(i64, i64)>> =
        std::collections::HashMap::new();
    let mut all_ids: Vec<Value> = Vec::new();
    let mut quantities: std::collections::HashMap<(String, i64), i64> =
        std::collections::HashMap::new();
    for v in &orders {
        let t = v.as_tuple().ok_or_else(|| {
            EngineError::TypeMismatch("orders entries must be (sec_id, i_id, i_quantity)".into())
        })?;
        let sec = t[0]
            .as_str()
            .ok_or_else(|| EngineError::TypeMismatch("order sec_id must be a string".into()))?
            .to_string();
        let i_id = t[1]
            .as_int()
            .ok_or_else(|| EngineError::TypeMismatch("order i_id must be int".into()))?;
        let qty = t[2]
            .as_int()
            .ok_or_else(|| EngineError::TypeMismatch("order i_quantity must be int".into()))?;
        if qty <= 0 {
            return Err(EngineError::Application(format!(
                "order quantity for item {i_id} must be positive"
            )));
        }
        if quantities.insert((sec.clone(), i_id), qty).is_some() {
            return Err(EngineError::Application(format!(
                "duplicate order line for section {sec} item {i_id}"
            )));
        }
        if !by_section.contains_key(&sec) {
            section_order.push(sec.clone());
        }
        by_section.entry(sec).or_default().push((i_id, qty));
        all_ids.push(Value::Int(i_id));
    }

    // Fire price lookups first; they overlap everything below.
    let mut price_futures = Vec::with_capacity(section_order.len());
    for sec in &section_order {
        let ids: Vec<Value> = by_section[sec].iter().map(|(i, _)| Value::Int(*i)).collect();
        let fut = ctx.invoke(
            &ActorAddress::new(STORE_SECTION, sec.as_str())?,
            "get_price",
            vec![Value::List(ids)],
        )?;
        price_futures.push(fut);
    }

    // Customer group, then fixed discounts for all ordered items.
    let cg_fut = ctx.invoke(
        &ActorAddress::new(CUSTOMER, o_c_id.to_string())?,
        "get_customer_info",
        vec![],
    )?;
    let info = ctx.get(&cg_fut)?;
    let c_g = info
        .as_tuple()
        .and_then(|t| t.get(1))
        .and_then(|v| v.as_int())
        .ok_or_else(|| EngineError::TypeMismatch("customer_info must be (name, group)".into()))?;
    let disc_fut = ctx.invoke(
        &ActorAddress::new(GROUP_MANAGER, c_g.to_string())?,
        "get_fixed_discounts",
        vec![Value::List(all_ids)],
    )?;

    // Generate the session id and update cart_info.
    let cart_info = ctx.relation("cart_info")?;
    let info_rows = cart_info.scan(&Predicate::True, None)?;
    let row = info_rows
        .first()
        .ok_or_else(|| EngineError::Application("cart_info is empty".into()))?;
    let v_session = row[2].as_int().unwrap_or(0) + 1;
    let cart_purchases = ctx.relation("cart_purchases")?;
    let open = cart_purchases.scan(&Predicate::eq("session_id", Value::Int(v_session)), None)?;
    if !open.is_empty() {
        return Err(EngineError::SessionAlreadyOpen);
    }
    cart_info.update(
        &Predicate::True,
        &[("c_id", Value::Int(o_c_id)), ("session_id", Value::Int(v_session))],
    )?;

    let discounts = ctx.get(&disc_fut)?;
    let mut fixed_by_id: std::collections::HashMap<i64, f64> = std::collections::HashMap::new();
    for r in discounts.as_list().unwrap_or(&[]) {
        if let Some(t) = r.as_tuple() {
            if let (Some(id), Some(d)) = (t[0].as_int(), t[1].as_float()) {
                fixed_by_id.insert(id, d);
            }
        }
    }

    ctx.when_all(&price_futures)?;

    // Record cart purchases from prices + discounts; items missing from a
    // section's inventory were omitted by get_price and stay out.
    for (sec, fut) in section_order.iter().zip(&price_futures) {
        let sec_int: i64 = sec
            .parse()
            .map_err(|_| EngineError::Application(format!("section name `{sec}` is not numeric")))?;
        let rows = ctx.get(fut)?;
        for r in rows.as_list().unwrap_or(&[]) {
            let t = r.as_tuple().unwrap_or(&[]);
            let i_id = t[0].as_int().unwrap();
            let price = t[1].as_float().unwrap();
            let min_price = t[2].as_float().unwrap();
            let qty = quantities[&(sec.clone(), i_id)];
            let fixed = fixed_by_id.get(&i_id).copied().unwrap_or(0.0);
            cart_purchases.insert(vec![
                Value::Int(sec_int),
                Value::Int(v_session),
                Value::Int(i_id),
                Value::Int(qty),
                Value::Float(fixed),
                Value::Float(min_price),
                Value::Float(price),
            ])?;
        }
    }

    Ok(Value::Int(v_session))
}

fn checkout(ctx: &MethodCtx) -> Result<Value> {
    let c_session_id = ctx.int_arg(0)?;
    let cart_info = ctx.relation("cart_info")?;
    let rows = cart_info.scan(&Predicate::True, None)?;
    let v_cart = rows
        .first()
        .ok_or_else(|| EngineError::Application("cart_info is empty".into()))?;
    let c_id = v_cart[0].as_int().unwrap_or(0);
    let store_id = v_cart[1].as_int().unwrap_or(0);
    let v_c_time = ctx.current_time();

    let purchases = ctx
        .relation("cart_purchases")?
        .scan(&Predicate::eq("session_id", Value::Int(c_session_id)), None)?;
    if purchases.is_empty() {
        return Err(EngineError::UnknownSession(c_session_id));
    }

    // Distinct sections of the session, first-appearance order, each with
    // its (i_id, i_quantity, i_price, i_fixed_disc, i_min_price) rows.
    let mut sections: Vec<String> = Vec::new();
    let mut items_by_section: std::collections::HashMap<String, Vec<Value>> =
        std::collections::HashMap::new();
    for row in &purchases {
        let sec = row[0].as_int().unwrap().to_string();
        if !items_by_section.contains_key(&sec) {
            sections.push(sec.clone());
        }
        items_by_section.entry(sec).or_default().push(Value::Tuple(vec![
            row[2].clone(), // i_id
            row[3].clone(), // i_quantity
            row[6].clone(), // i_price
            row[4].clone(), // i_fixed_disc
            row[5].clone(), // i_min_price
        ]));
    }

    let results = ctx.bulk_invoke(
        STORE_SECTION,
        &sections,
        "get_variable_discount_update_inventory",
        &|sec| {
            vec![
                Value::Int(c_id),
                Value::Timestamp(v_c_time),
                Value::List(items_by_section[sec].clone()),
            ]
        },
    )?;

    let amt = results.sum("amount")?.unwrap_or(0.0);
    let fixed = results.sum("fixed_disc")?.unwrap_or(0.0);
    let var = results.sum("var_disc")?.unwrap_or(0.0);

    ctx.detach(
        &ActorAddress::new(CUSTOMER, c_id.to_string())?,
        "add_store_visit",
        vec![
            Value::Int(store_id),
            Value::Timestamp(v_c_time),
            Value::Float(amt),
            Value::Float(fixed),
            Value::Float(var),
        ],
        crate::txn::DetachTrigger::OnCommit,
        crate::txn::Delivery::ExactlyOnce,
    )?;

    Ok(Value::Float(amt))
}

/// Register the four SmartMart actor types.
pub fn register_types(engine: &Arc<Engine>, options: &SmartMartOptions) -> Result<()> {
    let validate = options.validate.clone();
    let mut customer_s = customer_schemas();
    let customer = ActorTypeDef::new(CUSTOMER)
        .relation(customer_s.remove(0))
        .relation(customer_s.remove(0))
        .relation(customer_s.remove(0))
        .method(
            MethodDescriptor::new("get_customer_info").returns(ReturnType::Tuple(
                ReturnType::columns(vec![
                    ("cust_name", ColumnType::Str),
                    ("c_g_id", ColumnType::Int),
                ]),
            )),
            get_customer_info,
        )
        .method(
            MethodDescriptor::new("add_store_visit").params(vec![
                ParamType::Int,
                ParamType::Timestamp,
                ParamType::Float,
                ParamType::Float,
                ParamType::Float,
            ]),
            add_store_visit,
        )
        .method(
            MethodDescriptor::new("authenticate")
                .params(vec![ParamType::Str])
                .returns(ReturnType::Bool)
                .encrypted(),
            move |ctx| authenticate(ctx, &validate),
        );
    engine.register_actor_type(customer)?;

    let gm = ActorTypeDef::new(GROUP_MANAGER)
        .relation(group_manager_schemas().remove(0))
        .method(
            MethodDescriptor::new("get_fixed_discounts")
                .params(vec![ParamType::List])
                .returns(ReturnType::Rows(ReturnType::columns(vec![
                    ("i_id", ColumnType::Int),
                    ("fixed_disc", ColumnType::Float),
                ]))),
            get_fixed_discounts,
        );
    engine.register_actor_type(gm)?;

    let params = options.params.clone();
    let mut section_schemas = store_section_schemas();
    let section = ActorTypeDef::new(STORE_SECTION)
        .relation(section_schemas.remove(0))
        .relation(section_schemas.remove(0))
        .method(
            MethodDescriptor::new("get_price")
                .params(vec![ParamType::List])
                .returns(ReturnType::Rows(ReturnType::columns(vec![
                    ("i_id", ColumnType::Int),
                    ("i_price", ColumnType::Float),
                    ("i_min_price", ColumnType::Float),
                ]))),
            get_price,
        )
        .method(
            MethodDescriptor::new("get_variable_discount_update_inventory")
                .params(vec![ParamType::Int, ParamType::Timestamp, ParamType::List])
                .returns(ReturnType::Tuple(ReturnType::columns(vec![
                    ("amount", ColumnType::Float),
                    ("fixed_disc", ColumnType::Float),
                    ("var_disc", ColumnType::Float),
                ]))),
            move |ctx| get_variable_discount_update_inventory(ctx, &params),
        );
    engine.register_actor_type(section)?;

    let mut cart_s = cart_schemas();
    let cart = ActorTypeDef::new(CART)
        .nondurable()
        .relation(cart_s.remove(0))
        .relation(cart_s.remove(0))
        .method(
            MethodDescriptor::new("add_items")
                .params(vec![ParamType::List, ParamType::Int])
                .returns(ReturnType::Int),
            add_items,
        )
        .method(
            MethodDescriptor::new("checkout")
                .params(vec![ParamType::Int])
                .returns(ReturnType::Float),
            checkout,
        );
    engine.register_actor_type(cart)?;
    Ok(())
}

/// Parameters of a synthetic store.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StoreConfig {
    pub sections: usize,
    pub items_per_section: usize,
    pub history_rows_per_item: usize,
    pub carts: usize,
    pub group_managers: usize,
    pub customers_per_cart: usize,
    pub initial_quantity: i64,
    pub store_id: i64,
    pub seed: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            sections: 8,
            items_per_section: 500,
            history_rows_per_item: 30,
            carts: 1,
            group_managers: 10,
            customers_per_cart: 30,
            initial_quantity: 100_000,
            store_id: 1,
            seed: 42,
        }
    }
}

impl StoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.carts == 0 {
            return Err(EngineError::Config("carts must be >= 1".into()));
        }
        if self.sections == 0 || self.items_per_section == 0 {
            return Err(EngineError::Config(
                "sections and items_per_section must be >= 1".into(),
            ));
        }
        if self.group_managers == 0 {
            return Err(EngineError::Config("group_managers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn customers(&self) -> usize {
        self.customers_per_cart * self.carts
    }

    pub fn section_name(&self, idx: usize) -> String {
        ((idx + 1) * 100).to_string()
    }

    pub fn section_names(&self) -> Vec<String> {
        (0..self.sections).map(|i| self.section_name(i)).collect()
    }

    /// Global item id range stocked by one section.
    pub fn section_items(&self, idx: usize) -> std::ops::Range<i64> {
        let base = (idx * self.items_per_section) as i64;
        base..base + self.items_per_section as i64
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct LoadSummary {
    pub sections: usize,
    pub inventory_rows: usize,
    pub history_rows: usize,
    pub customers: usize,
    pub carts: usize,
    pub group_managers: usize,
    pub discount_rows: usize,
}

fn run_load_txn<F>(engine: &Arc<Engine>, target: &ActorAddress, body: F) -> Result<()>
where
    F: FnOnce(&MethodCtx) -> Result<Value> + Send + 'static,
{
    let txn = engine.begin_root(crate::txn::TxnOptions::default())?;
    let fut = txn.invoke_with(target, body)?;
    match txn.get(&fut) {
        Ok(_) => match txn.commit() {
            crate::error::CommitResult::Committed(_) => Ok(()),
            crate::error::CommitResult::Aborted(r) => Err(EngineError::Aborted(r)),
        },
        Err(e) => {
            txn.abort();
            Err(e)
        }
    }
}

/// Create all SmartMart actors and populate them with seeded synthetic
/// data. Loading runs through ordinary transactions, so enabled
/// durability logs it and recovery can rebuild it.
pub fn load_store(engine: &Arc<Engine>, cfg: &StoreConfig) -> Result<LoadSummary> {
    cfg.validate()?;
    let mut summary = LoadSummary {
        sections: cfg.sections,
        carts: cfg.carts,
        group_managers: cfg.group_managers,
        customers: cfg.customers(),
        ..Default::default()
    };

    let section_names = cfg.section_names();
    let refs: Vec<&str> = section_names.iter().map(|s| s.as_str()).collect();
    engine.create_actors(STORE_SECTION, &refs)?;
    let gm_names: Vec<String> = (1..=cfg.group_managers).map(|i| i.to_string()).collect();
    let refs: Vec<&str> = gm_names.iter().map(|s| s.as_str()).collect();
    engine.create_actors(GROUP_MANAGER, &refs)?;
    let customer_names: Vec<String> = (1..=cfg.customers()).map(|i| i.to_string()).collect();
    let refs: Vec<&str> = customer_names.iter().map(|s| s.as_str()).collect();
    engine.create_actors(CUSTOMER, &refs)?;
    let cart_names: Vec<String> = (1..=cfg.carts).map(|i| i.to_string()).collect();
    let refs: Vec<&str> = cart_names.iter().map(|s| s.as_str()).collect();
    engine.create_actors(CART, &refs)?;

    // Per-item price data is needed by both sections and group managers;
    // generate once, deterministically from the seed.
    let total_items = cfg.sections * cfg.items_per_section;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut prices = Vec::with_capacity(total_items);
    for _ in 0..total_items {
        let price: f64 = rng.gen_range(5.0..50.0);
        let min_price = price * rng.gen_range(0.5..0.8);
        let var_disc = price * rng.gen_range(0.0..0.3);
        prices.push((price, min_price, var_disc));
    }

    const CHUNK: usize = 5_000;
    for (s, sec_name) in section_names.iter().enumerate() {
        let addr = ActorAddress::new(STORE_SECTION, sec_name.as_str())?;
        let ids: Vec<i64> = cfg.section_items(s).collect();
        // inventory
        for chunk in ids.chunks(CHUNK) {
            let rows: Vec<Vec<Value>> = chunk
                .iter()
                .map(|&i| {
                    let (p, m, v) = prices[i as usize];
                    vec![
                        Value::Int(i),
                        Value::Float(p),
                        Value::Float(m),
                        Value::Int(cfg.initial_quantity),
                        Value::Float(v),
                    ]
                })
                .collect();
            summary.inventory_rows += rows.len();
            run_load_txn(engine, &addr, move |ctx| {
                let rel = ctx.relation("inventory")?;
                for r in rows {
                    rel.insert(r)?;
                }
                Ok(Value::Unit)
            })?;
        }
        // purchase history: `history_rows_per_item` rows per item with
        // ascending timestamps, quantities uniform in 1..=5
        let mut hrng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x5ec + s as u64));
        let customers = cfg.customers() as i64;
        let mut rows = Vec::new();
        for t in 0..cfg.history_rows_per_item {
            for &i in &ids {
                rows.push(vec![
                    Value::Int(i),
                    Value::Timestamp((t + 1) as i64),
                    Value::Int(hrng.gen_range(1..=5)),
                    Value::Int(hrng.gen_range(1..=customers.max(1))),
                ]);
            }
        }
        summary.history_rows += rows.len();
        for chunk in rows.chunks(CHUNK) {
            let chunk: Vec<Vec<Value>> = chunk.to_vec();
            run_load_txn(engine, &addr, move |ctx| {
                let rel = ctx.relation("purchase_history")?;
                for r in chunk {
                    rel.insert(r)?;
                }
                Ok(Value::Unit)
            })?;
        }
    }

    // group managers: fixed discount per item, per group
    for name in &gm_names {
        let addr = ActorAddress::new(GROUP_MANAGER, name.as_str())?;
        let mut grng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x6d << 8) ^ name.parse::<u64>().unwrap_or(0));
        let rows: Vec<Vec<Value>> = (0..total_items as i64)
            .map(|i| {
                let (price, _, _) = prices[i as usize];
                vec![
                    Value::Int(i),
                    Value::Float(price * grng.gen_range(0.0..0.2)),
                ]
            })
            .collect();
        summary.discount_rows += rows.len();
        for chunk in rows.chunks(CHUNK) {
            let chunk: Vec<Vec<Value>> = chunk.to_vec();
            run_load_txn(engine, &addr, move |ctx| {
                let rel = ctx.relation("discounts")?;
                for r in chunk {
                    rel.insert(r)?;
                }
                Ok(Value::Unit)
            })?;
        }
    }

    // customers: info row, password row
    let mut crng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc057);
    for name in &customer_names {
        let addr = ActorAddress::new(CUSTOMER, name.as_str())?;
        let group = crng.gen_range(1..=cfg.group_managers as i64);
        let cust_name = format!("cust{name}");
        let passwd = format!("pw{name}");
        run_load_txn(engine, &addr, move |ctx| {
            ctx.relation("customer_info")?
                .insert(vec![Value::Str(cust_name), Value::Int(group)])?;
            ctx.relation("passwd")?.insert(vec![Value::Str(passwd)])?;
            Ok(Value::Unit)
        })?;
    }

    // carts: single cart_info row
    for name in &cart_names {
        let addr = ActorAddress::new(CART, name.as_str())?;
        let store_id = cfg.store_id;
        run_load_txn(engine, &addr, move |ctx| {
            ctx.relation("cart_info")?.insert(vec![
                Value::Int(0),
                Value::Int(store_id),
                Value::Int(0),
            ])?;
            Ok(Value::Unit)
        })?;
    }

    Ok(summary)
}

/// The application's declared type-level call graph, for static
/// verification against an access rule set.
pub const CALL_GRAPH: &[((&str, &str), (&str, &str))] = &[
    (("Cart", "add_items"), ("Store_Section", "get_price")),
    (("Cart", "add_items"), ("Customer", "get_customer_info")),
    (("Cart", "add_items"), ("Group_Manager", "get_fixed_discounts")),
    (
        ("Cart", "checkout"),
        ("Store_Section", "get_variable_discount_update_inventory"),
    ),
    (("Cart", "checkout"), ("Customer", "add_store_visit")),
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relstore::WindowStats;

    fn stats(mean: f64, stddev: f64, n: usize) -> WindowStats {
        WindowStats {
            key: 0,
            mean,
            sample_stddev: stddev,
            window_count: n,
        }
    }

    #[test]
    fn variable_discount_ratio_one() {
        // q equals the window mean with zero spread: full VD applies.
        let vd = variable_discount(10, &stats(10.0, 0.0, 4), 0.5, 1.0);
        assert!((vd - 0.5).abs() < 1e-12);
    }

    #[test]
    fn variable_discount_ratio_two() {
        let vd = variable_discount(20, &stats(10.0, 0.0, 2), 0.5, 2.0);
        assert!((vd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn variable_discount_with_spread() {
        // window [10, 14, 12]: mean 12, sample stddev 2; c=2 -> 12/(12+4)
        let vd = variable_discount(12, &stats(12.0, 2.0, 3), 1.0, 2.0);
        assert!((vd - 0.75).abs() < 1e-12);
    }

    #[test]
    fn variable_discount_empty_window_is_zero() {
        assert_eq!(variable_discount(5, &stats(0.0, 0.0, 0), 1.0, 1.0), 0.0);
    }
}
