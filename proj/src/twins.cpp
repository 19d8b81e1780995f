#include "looptwin/twins.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace looptwin {

std::string encoder_name(EncoderKind k) {
  switch (k) {
    case EncoderKind::Gat:
      return "gat";
    case EncoderKind::Gcn:
      return "gcn";
    case EncoderKind::Sage:
      return "sage";
  }
  throw std::logic_error("encoder_name: bad kind");
}

EncoderKind encoder_from_name(const std::string& name) {
  if (name == "gat") return EncoderKind::Gat;
  if (name == "gcn") return EncoderKind::Gcn;
  if (name == "sage") return EncoderKind::Sage;
  throw std::invalid_argument("unknown encoder: " + name);
}

void TwinConfig::validate() const {
  if (latent < 1) throw std::invalid_argument("config: latent must be positive");
  if (gat_heads < 1) throw std::invalid_argument("config: gat_heads must be positive");
  if (encoder_layers < 1) throw std::invalid_argument("config: encoder_layers must be positive");
  if (sa_heads < 1 || sa_dk < 1)
    throw std::invalid_argument("config: attention heads and key dim must be positive");
  if (edge_proj < 1) throw std::invalid_argument("config: edge_proj must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("config: dropout outside [0,1)");
  if (w < 1) throw std::invalid_argument("config: window must be positive");
}

nlohmann::json TwinConfig::to_json() const {
  nlohmann::json j;
  j["kind"] = kind == TemplateKind::Exit ? "exit" : "inflow";
  j["encoder"] = encoder_name(encoder);
  j["self_attention"] = self_attention;
  j["latent"] = latent;
  j["gat_heads"] = gat_heads;
  j["encoder_layers"] = encoder_layers;
  j["sa_heads"] = sa_heads;
  j["sa_dk"] = sa_dk;
  j["edge_proj"] = edge_proj;
  j["dropout"] = dropout;
  j["score_slope"] = score_slope;
  j["w"] = w;
  j["variant"] = variant;
  return j;
}

TwinConfig TwinConfig::from_json(const nlohmann::json& j) {
  TwinConfig c;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "exit")
    c.kind = TemplateKind::Exit;
  else if (kind == "inflow")
    c.kind = TemplateKind::Inflow;
  else
    throw std::invalid_argument("config: unknown template kind " + kind);
  c.encoder = encoder_from_name(j.at("encoder").get<std::string>());
  c.self_attention = j.value("self_attention", true);
  c.latent = j.value("latent", 160);
  c.gat_heads = j.value("gat_heads", 2);
  c.encoder_layers = j.value("encoder_layers", 1);
  c.sa_heads = j.value("sa_heads", 2);
  c.sa_dk = j.value("sa_dk", 8);
  c.edge_proj = j.value("edge_proj", 16);
  c.dropout = j.value("dropout", 0.1);
  c.score_slope = j.value("score_slope", 0.0);
  c.w = j.value("w", kWindow);
  c.variant = j.value("variant", std::string("custom"));
  c.validate();
  return c;
}

TwinConfig TwinConfig::variant_named(const std::string& name) {
  TwinConfig c;
  c.variant = name;
  if (name == "gatconv-ext") {
    c.kind = TemplateKind::Exit;
    c.encoder = EncoderKind::Gat;
  } else if (name == "gatconv-inf") {
    c.kind = TemplateKind::Inflow;
    c.encoder = EncoderKind::Gat;
    c.encoder_layers = 2;
  } else if (name == "sageconv-ext") {
    c.kind = TemplateKind::Exit;
    c.encoder = EncoderKind::Sage;
  } else if (name == "gcnconv-ext") {
    c.kind = TemplateKind::Exit;
    c.encoder = EncoderKind::Gcn;
  } else if (name == "gatconv-ablated") {
    c.kind = TemplateKind::Exit;
    c.encoder = EncoderKind::Gat;
    c.self_attention = false;
  } else {
    throw std::invalid_argument("unknown model variant: " + name);
  }
  return c;
}

std::vector<std::string> TwinConfig::variant_names() {
  return {"gatconv-ext", "gatconv-inf", "sageconv-ext", "gcnconv-ext", "gatconv-ablated"};
}

TwinConfig checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  const char want[8] = {'L', 'T', 'C', 'K', '1', '\n', 0, 0};
  if (!in || !std::equal(magic, magic + 8, want))
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(htext);
  return TwinConfig::from_json(header.at("config"));
}

}  // namespace looptwin
