#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pgsu/nn.hpp"
#include "pgsu/scene.hpp"
#include "pgsu/tensor.hpp"

namespace pgsu {

struct BackboneConfig {
  std::size_t d_model = 64;        // D
  std::size_t n_interleave = 2;    // agent-self + agent-map rounds
  std::size_t m_alltoken = 3;      // all-token rounds
  std::size_t subgraph_layers = 3;
  std::size_t agent_dim = kAgentFeatureDim;
  std::size_t map_dim = kMapFeatureDim;
  double dropout = 0.1;
  bool layer_norm = false;
  /// Attend over valid tokens only instead of the padded, masked token set.
  /// Valid-token outputs are identical either way.
  bool compact_tokens = true;
  /// Coordinates (and velocities) are divided by this before the first
  /// subgraph layer.
  double coord_scale = 10.0;

  void validate() const;
};

/// One scene's encoder input. `masked_lanes` lists map slots whose token
/// receives the mask embedding (their feature rows are expected zeroed).
struct SceneInput {
  const AgentFeatureTensor* agents = nullptr;
  const MapFeatureTensor* map = nullptr;
  std::vector<std::size_t> masked_lanes;
};

/// Row bookkeeping for a batch of scenes flowing through the encoder.
struct TokenLayout {
  std::size_t batch = 0;
  std::size_t n_agents = 0;
  std::size_t n_lanes = 0;
  bool compact = true;
  std::vector<AttentionGroup> agent_self;
  std::vector<AttentionGroup> agent_map;
  std::vector<AttentionGroup> all_tokens;
  std::vector<std::uint8_t> agent_key_valid;     // empty when compact
  std::vector<std::uint8_t> map_key_valid;       // empty when compact
  std::vector<std::uint8_t> combined_key_valid;  // empty when compact
  std::vector<std::size_t> agent_row;            // [b * n_agents + i] -> token row or kZeroRow
  std::vector<std::size_t> map_row;              // [b * n_lanes + j] -> token row or kZeroRow
  std::vector<std::size_t> combine_order;        // rows of concat(agents, map) forming C
  std::vector<std::size_t> output_rows;          // padded output row -> row of C or kZeroRow
  std::size_t agent_token_rows = 0;
  std::size_t map_token_rows = 0;
};

/// Score-matrix entries formed per round.
struct AttentionStats {
  std::vector<std::size_t> interleave_rounds;
  std::vector<std::size_t> alltoken_rounds;
};

/// Final scene embedding: per scene, N_a agent rows then N_m lane rows.
/// Padded slots are zero rows.
struct TokenSet {
  Tensor combined;  // [batch * (N_a + N_m), D]
  std::size_t batch = 0;
  std::size_t n_agents = 0;
  std::size_t n_lanes = 0;
  AttentionStats stats;

  std::size_t agent_row(std::size_t b, std::size_t i) const {
    return b * (n_agents + n_lanes) + i;
  }
  std::size_t map_row(std::size_t b, std::size_t j) const {
    return b * (n_agents + n_lanes) + n_agents + j;
  }
  Tensor agent_tokens() const;  // [batch * N_a, D]
  Tensor map_tokens() const;    // [batch * N_m, D]
  /// Target-agent token (slot 0) of every scene: [batch, D].
  Tensor ego_tokens() const;
  Tensor map_tokens_at(std::span<const std::size_t> combined_rows) const;
};

struct SubgraphEncoder {
  struct Layer {
    Linear encode;
    Linear fuse;
  };
  std::vector<Layer> layers;

  static SubgraphEncoder create(ParameterStore& store, const std::string& prefix,
                                std::size_t in_dim, const BackboneConfig& cfg, Rng& rng);
  /// rows: all segments of all polylines stacked; offsets[p]..offsets[p+1]
  /// delimit polyline p. Returns one D-vector per polyline.
  Tensor operator()(const Tensor& rows, std::span<const std::size_t> offsets) const;
};

struct AttentionBlock {
  Linear wq;
  Linear wk;
  Linear wv;
  Mlp update;
  Tensor ln_gamma;
  Tensor ln_beta;

  static AttentionBlock create(ParameterStore& store, const std::string& prefix,
                               const BackboneConfig& cfg, Rng& rng);
  /// queries + MLP(attention(queries -> keys_values)).
  Tensor operator()(const Tensor& queries, const Tensor& keys_values,
                    std::span<const AttentionGroup> groups,
                    std::span<const std::uint8_t> key_valid, const ForwardContext& ctx,
                    std::size_t* score_entries) const;
};

/// Intermediate encoder state between block applications.
struct EncoderState {
  TokenLayout layout;
  Tensor agents;  // agent token rows
  Tensor map;     // map token rows
  Tensor combined;
  AttentionStats stats;
};

class Backbone {
 public:
  Backbone(ParameterStore& store, const BackboneConfig& cfg, Rng& rng);

  const BackboneConfig& config() const { return cfg_; }

  /// Subgraph-encodes both groups and lays out token rows. When defined,
  /// `mask_token` is added to the listed masked lanes: either one [D] vector
  /// shared by all of them or one [n_masked, D] row per masked lane in scene
  /// order.
  EncoderState embed(std::span<const SceneInput> scenes, const Tensor& mask_token = {}) const;
  void agent_self_block(std::size_t round, EncoderState& s, const ForwardContext& ctx) const;
  void agent_map_block(std::size_t round, EncoderState& s, const ForwardContext& ctx) const;
  void combine(EncoderState& s) const;
  void all_token_block(std::size_t round, EncoderState& s, const ForwardContext& ctx) const;
  TokenSet finish(const EncoderState& s) const;

  /// Full encoder: embed, (self, cross) x N, combine, all-token x M.
  TokenSet encode(std::span<const SceneInput> scenes, const ForwardContext& ctx,
                  const Tensor& mask_token = {}) const;

  const SubgraphEncoder& agent_encoder() const { return agent_encoder_; }
  const SubgraphEncoder& map_encoder() const { return map_encoder_; }

 private:
  BackboneConfig cfg_;
  SubgraphEncoder agent_encoder_;
  SubgraphEncoder map_encoder_;
  std::vector<AttentionBlock> self_blocks_;
  std::vector<AttentionBlock> cross_blocks_;
  std::vector<AttentionBlock> all_blocks_;
};

/// Convenience wrapper for a single scene.
TokenSet encode_scene(const Backbone& backbone, const AgentFeatureTensor& agents,
                      const MapFeatureTensor& map, const ForwardContext& ctx);

/// Parameter-name prefixes owned by the backbone.
inline const std::vector<std::string> kBackbonePrefixes = {"subgraph.", "interleave.",
                                                           "alltoken."};

/// Score entries of one padded round: N_a^2 + N_a N_m (interleaved) and
/// (N_a + N_m)^2 (all-token).
std::size_t interleave_pair_count(std::size_t n_agents, std::size_t n_lanes);
std::size_t alltoken_pair_count(std::size_t n_agents, std::size_t n_lanes);

}  // namespace pgsu
