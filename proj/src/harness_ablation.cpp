#include <ostream>

#include "galore/error.hpp"
#include "galore/harness.hpp"

namespace galore::harness {

std::vector<AblationRow> run_ablation(const AblationConfig& config) {
  if (config.ranks.empty() || config.switch_freqs.empty() || config.seeds.empty()) {
    throw InvalidInput("ablation grid must be non-empty on every axis");
  }
  std::vector<AblationRow> rows;
  for (std::size_t rank : config.ranks) {
    for (std::int64_t freq : config.switch_freqs) {
      for (std::uint64_t seed : config.seeds) {
        AblationRow row{rank, freq, seed, false, 0.0, {}};
        RunConfig cell = config.base;
        cell.rank = rank;
        cell.switch_freq = freq;
        cell.seed = seed;
        try {
          row.final_loss = run_train(cell).final_loss;
          row.ok = true;
        } catch (const Error& e) {
          row.error = e.what();
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  const auto prec = out.precision(17);
  out << "rank,switch_freq,seed,status,final_loss,error\n";
  for (const auto& r : rows) {
    out << r.rank << ',';
    if (r.switch_freq == kNeverSwitch) {
      out << "never";
    } else {
      out << r.switch_freq;
    }
    out << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ',';
    if (r.ok) out << r.final_loss;
    out << ',';
    if (!r.ok) {
      std::string msg = r.error;
      for (char& ch : msg) {
        if (ch == ',' || ch == '\n') ch = ' ';
      }
      out << msg;
    }
    out << '\n';
  }
  out.precision(prec);
}

}  // namespace galore::harness
