#include "distillrank/encoder.hpp"

#include <array>
#include <fstream>

namespace distillrank {

namespace {

constexpr std::array<char, 4> kCheckpointMagic{'D', 'R', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError("checkpoint truncated");
  return v;
}

}  // namespace

std::string_view to_string(SimilarityMode mode) {
  switch (mode) {
    case SimilarityMode::dot:
      return "dot";
    case SimilarityMode::cosine:
      return "cosine";
    case SimilarityMode::maxsim:
      return "maxsim";
  }
  return "unknown";
}

SimilarityMode parse_similarity(std::string_view name) {
  if (name == "dot") return SimilarityMode::dot;
  if (name == "cosine") return SimilarityMode::cosine;
  if (name == "maxsim") return SimilarityMode::maxsim;
  throw ValidationError("unknown similarity mode '" + std::string(name) + "'");
}

void save_checkpoint(const EncoderModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint32_t>(model.mode()));
  put(out, static_cast<std::uint64_t>(model.dim()));
  put(out, static_cast<std::uint64_t>(model.vocab_size()));
  put(out, static_cast<std::uint8_t>(model.shared()));
  put(out, model.options().seed);
  auto write_table = [&](const EncoderModel::Matrix& t) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(sizeof(double) * t.size()));
  };
  write_table(model.query_table());
  if (!model.shared()) write_table(model.doc_table());
  if (!out) throw Error("failed writing " + path.string());
}

EncoderModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw ParseError("not a checkpoint file");
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw ParseError("unsupported checkpoint version");
  const auto mode = get<std::uint32_t>(in);
  if (mode > static_cast<std::uint32_t>(SimilarityMode::maxsim)) throw ParseError("checkpoint: bad similarity mode");
  EncoderOptions options;
  options.mode = static_cast<SimilarityMode>(mode);
  options.dim = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  const auto vocab = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  options.shared = get<std::uint8_t>(in) != 0;
  options.seed = get<std::uint64_t>(in);
  auto read_table = [&] {
    EncoderModel::Matrix t(vocab, options.dim);
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(double) * t.size())))
      throw ParseError("checkpoint truncated");
    return t;
  };
  auto query = read_table();
  EncoderModel::Matrix doc;
  if (!options.shared) doc = read_table();
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("checkpoint has trailing bytes");
  return EncoderModel(options, std::move(query), std::move(doc));
}

}  // namespace distillrank
