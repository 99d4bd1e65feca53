#include "pgsu/backbone.hpp"

#include <algorithm>

#include "pgsu/error.hpp"

namespace pgsu {

void BackboneConfig::validate() const {
  if (d_model == 0 || n_interleave == 0 || m_alltoken == 0 || subgraph_layers == 0)
    fail(ErrorKind::usage, "backbone dimensions and round counts must be >= 1");
  if (d_model % 2 != 0) fail(ErrorKind::usage, "backbone.D must be even");
  if (dropout < 0.0 || dropout >= 1.0) fail(ErrorKind::usage, "dropout must be in [0, 1)");
  if (!(coord_scale > 0.0)) fail(ErrorKind::usage, "coord_scale must be positive");
}

std::size_t interleave_pair_count(std::size_t n_agents, std::size_t n_lanes) {
  return n_agents * n_agents + n_agents * n_lanes;
}

std::size_t alltoken_pair_count(std::size_t n_agents, std::size_t n_lanes) {
  return (n_agents + n_lanes) * (n_agents + n_lanes);
}

Tensor TokenSet::agent_tokens() const {
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n_agents; ++i) rows.push_back(agent_row(b, i));
  return gather_rows(combined, rows);
}

Tensor TokenSet::map_tokens() const {
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < n_lanes; ++j) rows.push_back(map_row(b, j));
  return gather_rows(combined, rows);
}

Tensor TokenSet::ego_tokens() const {
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < batch; ++b) rows.push_back(agent_row(b, 0));
  return gather_rows(combined, rows);
}

Tensor TokenSet::map_tokens_at(std::span<const std::size_t> combined_rows) const {
  return gather_rows(combined, combined_rows);
}

SubgraphEncoder SubgraphEncoder::create(ParameterStore& store, const std::string& prefix,
                                        std::size_t in_dim, const BackboneConfig& cfg,
                                        Rng& rng) {
  SubgraphEncoder enc;
  const std::size_t d = cfg.d_model;
  for (std::size_t l = 0; l < cfg.subgraph_layers; ++l) {
    const std::string p = prefix + std::to_string(l);
    Layer layer;
    layer.encode = Linear::create(store, p + ".encode", l == 0 ? in_dim : d, d, rng);
    layer.fuse = Linear::create(store, p + ".fuse", 2 * d, d, rng);
    enc.layers.push_back(std::move(layer));
  }
  return enc;
}

Tensor SubgraphEncoder::operator()(const Tensor& rows,
                                   std::span<const std::size_t> offsets) const {
  std::vector<std::size_t> owner(rows.dim(0));
  for (std::size_t p = 0; p + 1 < offsets.size(); ++p)
    for (std::size_t r = offsets[p]; r < offsets[p + 1]; ++r) owner[r] = p;

  Tensor h = rows;
  for (const auto& layer : layers) {
    const Tensor e = relu(layer.encode(h));
    const Tensor pooled = segment_max(e, offsets);
    // fuse([e, spread(pooled)]) with the pooled half multiplied per polyline.
    const std::size_t d = e.dim(1);
    const Tensor w_seg = slice_rows(layer.fuse.weight, 0, d);
    const Tensor w_pool = slice_rows(layer.fuse.weight, d, 2 * d);
    h = relu(add(linear(e, w_seg, layer.fuse.bias),
                 gather_rows(matmul(pooled, w_pool), owner)));
  }
  return segment_max(h, offsets);
}

AttentionBlock AttentionBlock::create(ParameterStore& store, const std::string& prefix,
                                      const BackboneConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.d_model;
  AttentionBlock b;
  b.wq = Linear::create(store, prefix + "wq", d, d, rng, false);
  b.wk = Linear::create(store, prefix + "wk", d, d, rng, false);
  b.wv = Linear::create(store, prefix + "wv", d, d, rng, false);
  b.update = Mlp::create(store, prefix + "mlp.", {d, d, d}, rng);
  if (cfg.layer_norm) {
    b.ln_gamma = store.add_constant(prefix + "ln.gamma", {d}, 1.0);
    b.ln_beta = store.add_constant(prefix + "ln.beta", {d}, 0.0);
  }
  return b;
}

Tensor AttentionBlock::operator()(const Tensor& queries, const Tensor& keys_values,
                                  std::span<const AttentionGroup> groups,
                                  std::span<const std::uint8_t> key_valid,
                                  const ForwardContext& ctx, std::size_t* score_entries) const {
  const Tensor q = wq(queries);
  const Tensor k = wk(keys_values);
  const Tensor v = wv(keys_values);
  Tensor attn = grouped_attention(q, k, v, groups, key_valid, score_entries);
  attn = dropout(attn, ctx.dropout, ctx.training, ctx.rng);
  if (ln_gamma.defined()) attn = layer_norm(attn, ln_gamma, ln_beta);
  return residual_add(queries, update(attn, ctx));
}

Backbone::Backbone(ParameterStore& store, const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  agent_encoder_ = SubgraphEncoder::create(store, "subgraph.agent.", cfg.agent_dim, cfg, rng);
  map_encoder_ = SubgraphEncoder::create(store, "subgraph.map.", cfg.map_dim, cfg, rng);
  for (std::size_t i = 0; i < cfg.n_interleave; ++i) {
    const std::string p = "interleave." + std::to_string(i);
    self_blocks_.push_back(AttentionBlock::create(store, p + ".self.", cfg, rng));
    cross_blocks_.push_back(AttentionBlock::create(store, p + ".cross.", cfg, rng));
  }
  for (std::size_t j = 0; j < cfg.m_alltoken; ++j)
    all_blocks_.push_back(
        AttentionBlock::create(store, "alltoken." + std::to_string(j) + ".", cfg, rng));
}

namespace {

// Stacks the valid polylines of every scene into encoder rows, scaling the
// first `scaled_cols` columns by 1 / coord_scale.
struct StackedPolylines {
  Tensor rows;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> token_of_slot;  // [b * count + slot] -> polyline or kZeroRow
};

StackedPolylines stack_polylines(std::span<const PolylineFeatures* const> blocks,
                                 std::size_t scaled_cols, double coord_scale) {
  StackedPolylines out;
  const std::size_t steps = blocks.front()->steps;
  const std::size_t dim = blocks.front()->dim;
  std::vector<double> values;
  std::size_t polylines = 0;
  for (const PolylineFeatures* f : blocks) {
    for (std::size_t i = 0; i < f->count; ++i) {
      if (!f->valid[i]) {
        out.token_of_slot.push_back(kZeroRow);
        continue;
      }
      const auto row = f->row(i);
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t k = 0; k < dim; ++k) {
          const double x = row[t * dim + k];
          values.push_back(k < scaled_cols ? x / coord_scale : x);
        }
      out.offsets.push_back(out.offsets.back() + steps);
      out.token_of_slot.push_back(polylines++);
    }
  }
  const std::size_t n = values.size() / dim;
  out.rows = Tensor::from({n, dim}, std::move(values));
  return out;
}

void check_block(const PolylineFeatures* f, const PolylineFeatures* first, std::size_t dim,
                 const char* what) {
  if (!f) fail(ErrorKind::usage, std::string("encode: missing ") + what + " features");
  if (f->dim != dim)
    fail(ErrorKind::usage, std::string("encode: ") + what + " feature width " +
                               std::to_string(f->dim) + " does not match config " +
                               std::to_string(dim));
  if (f->count != first->count || f->steps != first->steps)
    fail(ErrorKind::usage, std::string("encode: ") + what + " tensors differ in shape across batch");
  if (f->data.size() != f->count * f->steps * f->dim || f->valid.size() != f->count)
    fail(ErrorKind::usage, std::string("encode: malformed ") + what + " tensor");
}

}  // namespace

EncoderState Backbone::embed(std::span<const SceneInput> scenes, const Tensor& mask_token) const {
  if (scenes.empty()) fail(ErrorKind::usage, "encode: empty batch");
  std::vector<const PolylineFeatures*> agent_blocks, map_blocks;
  for (const auto& s : scenes) {
    check_block(s.agents, scenes.front().agents, cfg_.agent_dim, "agent");
    check_block(s.map, scenes.front().map, cfg_.map_dim, "map");
    agent_blocks.push_back(s.agents);
    map_blocks.push_back(s.map);
  }

  EncoderState st;
  TokenLayout& L = st.layout;
  L.batch = scenes.size();
  L.n_agents = scenes.front().agents->count;
  L.n_lanes = scenes.front().map->count;
  L.compact = cfg_.compact_tokens;

  const StackedPolylines ap = stack_polylines(agent_blocks, 6, cfg_.coord_scale);
  const StackedPolylines mp = stack_polylines(map_blocks, 4, cfg_.coord_scale);
  const Tensor agent_poly = agent_encoder_(ap.rows, ap.offsets);
  const Tensor map_poly = map_encoder_(mp.rows, mp.offsets);

  if (L.compact) {
    // Token rows are exactly the valid polylines, scene-major.
    st.agents = agent_poly;
    st.map = map_poly;
    L.agent_row = ap.token_of_slot;
    L.map_row = mp.token_of_slot;
    L.agent_token_rows = agent_poly.dim(0);
    L.map_token_rows = map_poly.dim(0);
  } else {
    st.agents = gather_rows(agent_poly, ap.token_of_slot);
    st.map = gather_rows(map_poly, mp.token_of_slot);
    L.agent_token_rows = L.batch * L.n_agents;
    L.map_token_rows = L.batch * L.n_lanes;
    for (std::size_t r = 0; r < L.agent_token_rows; ++r) {
      L.agent_row.push_back(r);
      L.agent_key_valid.push_back(ap.token_of_slot[r] != kZeroRow);
    }
    for (std::size_t r = 0; r < L.map_token_rows; ++r) {
      L.map_row.push_back(r);
      L.map_key_valid.push_back(mp.token_of_slot[r] != kZeroRow);
    }
  }

  // Per-scene row ranges in the agent and map token matrices.
  std::size_t a = 0, m = 0, c = 0;
  for (std::size_t b = 0; b < L.batch; ++b) {
    const std::size_t na = L.compact ? scenes[b].agents->valid_count() : L.n_agents;
    const std::size_t nm = L.compact ? scenes[b].map->valid_count() : L.n_lanes;
    L.agent_self.push_back({a, a + na, a, a + na});
    L.agent_map.push_back({a, a + na, m, m + nm});
    L.all_tokens.push_back({c, c + na + nm, c, c + na + nm});
    for (std::size_t i = 0; i < na; ++i) L.combine_order.push_back(a + i);
    for (std::size_t j = 0; j < nm; ++j) L.combine_order.push_back(L.agent_token_rows + m + j);
    if (!L.compact) {
      for (std::size_t i = 0; i < na; ++i) L.combined_key_valid.push_back(L.agent_key_valid[a + i]);
      for (std::size_t j = 0; j < nm; ++j) L.combined_key_valid.push_back(L.map_key_valid[m + j]);
    }
    // Padded output rows: slot -> position inside C, or zero.
    for (std::size_t i = 0; i < L.n_agents; ++i) {
      const std::size_t r = L.agent_row[b * L.n_agents + i];
      const bool valid = scenes[b].agents->valid[i];
      L.output_rows.push_back(valid && r != kZeroRow ? c + (r - a) : kZeroRow);
    }
    for (std::size_t j = 0; j < L.n_lanes; ++j) {
      const std::size_t r = L.map_row[b * L.n_lanes + j];
      const bool valid = scenes[b].map->valid[j];
      L.output_rows.push_back(valid && r != kZeroRow ? c + na + (r - m) : kZeroRow);
    }
    a += na;
    m += nm;
    c += na + nm;
  }

  if (mask_token.defined()) {
    std::vector<std::size_t> rows;
    for (std::size_t b = 0; b < L.batch; ++b)
      for (std::size_t j : scenes[b].masked_lanes) {
        if (j >= L.n_lanes || !scenes[b].map->valid[j])
          fail(ErrorKind::usage, "encode: masked lane slot is not a valid lane");
        rows.push_back(L.map_row[b * L.n_lanes + j]);
      }
    if (rows.empty()) return st;
    if (mask_token.rank() == 1) {
      st.map = add_to_rows(st.map, mask_token, rows);
    } else {
      if (mask_token.dim(0) != rows.size())
        fail(ErrorKind::usage, "encode: one mask embedding row per masked lane expected");
      std::vector<std::size_t> idx(st.map.dim(0), kZeroRow);
      for (std::size_t i = 0; i < rows.size(); ++i) idx[rows[i]] = i;
      st.map = add(st.map, gather_rows(mask_token, idx));
    }
  }
  return st;
}

void Backbone::agent_self_block(std::size_t round, EncoderState& s,
                                const ForwardContext& ctx) const {
  if (s.stats.interleave_rounds.size() <= round) s.stats.interleave_rounds.resize(round + 1, 0);
  s.agents = self_blocks_.at(round)(s.agents, s.agents, s.layout.agent_self,
                                    s.layout.agent_key_valid, ctx,
                                    &s.stats.interleave_rounds[round]);
}

void Backbone::agent_map_block(std::size_t round, EncoderState& s,
                               const ForwardContext& ctx) const {
  if (s.stats.interleave_rounds.size() <= round) s.stats.interleave_rounds.resize(round + 1, 0);
  s.agents = cross_blocks_.at(round)(s.agents, s.map, s.layout.agent_map,
                                     s.layout.map_key_valid, ctx,
                                     &s.stats.interleave_rounds[round]);
}

void Backbone::combine(EncoderState& s) const {
  s.combined = gather_rows(concat({s.agents, s.map}, 0), s.layout.combine_order);
}

void Backbone::all_token_block(std::size_t round, EncoderState& s,
                               const ForwardContext& ctx) const {
  if (s.stats.alltoken_rounds.size() <= round) s.stats.alltoken_rounds.resize(round + 1, 0);
  s.combined = all_blocks_.at(round)(s.combined, s.combined, s.layout.all_tokens,
                                     s.layout.combined_key_valid, ctx,
                                     &s.stats.alltoken_rounds[round]);
}

TokenSet Backbone::finish(const EncoderState& s) const {
  TokenSet out;
  out.combined = gather_rows(s.combined, s.layout.output_rows);
  out.batch = s.layout.batch;
  out.n_agents = s.layout.n_agents;
  out.n_lanes = s.layout.n_lanes;
  out.stats = s.stats;
  return out;
}

TokenSet Backbone::encode(std::span<const SceneInput> scenes, const ForwardContext& ctx,
                          const Tensor& mask_token) const {
  EncoderState s = embed(scenes, mask_token);
  for (std::size_t i = 0; i < cfg_.n_interleave; ++i) {
    agent_self_block(i, s, ctx);
    agent_map_block(i, s, ctx);
  }
  combine(s);
  for (std::size_t j = 0; j < cfg_.m_alltoken; ++j) all_token_block(j, s, ctx);
  return finish(s);
}

TokenSet encode_scene(const Backbone& backbone, const AgentFeatureTensor& agents,
                      const MapFeatureTensor& map, const ForwardContext& ctx) {
  const SceneInput in{&agents, &map, {}};
  return backbone.encode(std::span(&in, 1), ctx);
}

}  // namespace pgsu
