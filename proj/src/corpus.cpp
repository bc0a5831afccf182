#include "triage/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "triage/error.hpp"
#include "triage/rng.hpp"

namespace triage::corpus {

using nlohmann::json;

std::string to_string(Role role) {
  switch (role) {
    case Role::tenant: return "tenant";
    case Role::prospective_tenant: return "prospective_tenant";
    case Role::owner: return "owner";
    case Role::agent: return "agent";
    case Role::photographer: return "photographer";
  }
  return "unknown";
}

const ReasonSpec& Catalog::find(const std::string& code) const { return reasons.at(index_of(code)); }

std::size_t Catalog::index_of(const std::string& code) const {
  for (std::size_t i = 0; i < reasons.size(); ++i) {
    if (reasons[i].code == code) return i;
  }
  throw Error(ErrorCode::unmapped_reason, "reason '" + code + "' is not in the catalog");
}

routing::DepartmentMap Catalog::department_map() const {
  json doc{{"departments", departments}, {"reasons", json::object()}};
  for (const auto& r : reasons) doc["reasons"][r.code] = r.department;
  return routing::DepartmentMap::from_json(doc);
}

std::string auto_message_type(const std::string& department) {
  static const std::map<std::string, std::string> types{
      {"visits", "visit_reminder"},     {"contracts", "contract_sent"},   {"payments", "payment_notice"},
      {"maintenance", "repair_update"}, {"partners", "partner_schedule"}, {"owners", "owner_report"}};
  const auto it = types.find(department);
  if (it == types.end()) throw Error(ErrorCode::invalid_argument, "no automatic message type for '" + department + "'");
  return it->second;
}

routing::HeuristicLookup Catalog::heuristic_lookup() const {
  routing::HeuristicLookup lookup;
  std::map<std::string, double> mass;
  for (std::size_t i = 0; i < reasons.size(); ++i) mass[reasons[i].department] += 1.0 / static_cast<double>(i + 1);
  lookup.default_department = std::max_element(mass.begin(), mass.end(), [](const auto& a, const auto& b) {
                                return a.second < b.second;
                              })->first;
  for (const auto& d : departments) lookup.message_to_department[auto_message_type(d)] = d;
  return lookup;
}

const Catalog& default_catalog() {
  static const Catalog catalog = [] {
    Catalog c;
    c.departments = {"contracts", "maintenance", "owners", "partners", "payments", "visits"};
    c.group_templates = {
        {"preciso cancelar a visita de amanhã", "não vou conseguir ir na visita de {dia}, preciso cancelar",
         "quero cancelar a visita marcada para {dia}"},
        {"o pagamento não caiu", "meu pagamento de {dia} ainda não caiu na conta", "até agora não recebi o pagamento"},
        {"preciso falar sobre o contrato", "tenho uma dúvida sobre o contrato do {imovel}", "quero encerrar o contrato"},
        {"estou sem a chave", "não consegui pegar a chave do {imovel}", "a chave não está onde combinaram"},
        {"preciso mudar a data", "consigo trocar a data para {dia}?", "quero remarcar para outro dia"},
        {"tem um problema no apartamento", "preciso de um reparo no {imovel}", "quebrou uma coisa no imóvel"},
        {"sobre as fotos do anúncio", "o anúncio do {imovel} está com fotos ruins", "quero mudar as fotos"},
        {"sobre o valor do aluguel", "quero negociar o valor do aluguel do {imovel}", "o aluguel está caro"},
    };
    using R = Role;
    c.reasons = {
        {"mn_reparo_urgente", "maintenance", R::tenant, 5,
         {"minha geladeira quebrou e o proprietário não responde", "está vazando água no banheiro e ninguém resolve",
          "o chuveiro queimou e preciso de conserto urgente"}},
        {"vi_cancelamento", "visits", R::prospective_tenant, 0,
         {"desisti do imóvel e quero desmarcar meu agendamento", "não tenho mais interesse no {imovel}, podem desmarcar",
          "encontrei outro apartamento, cancelem meu agendamento de {dia}"}},
        {"pp_repasse_atraso", "payments", R::owner, 1,
         {"o repasse do aluguel do {imovel} está atrasado", "o aluguel do meu imóvel não foi repassado este mês",
          "cadê o repasse do aluguel de {dia}"}},
        {"iq_boleto_duplicado", "payments", R::tenant, 1,
         {"recebi dois boletos do aluguel este mês", "o boleto veio duplicado e fui cobrado duas vezes",
          "paguei o boleto mas apareceu outro igual"}},
        {"vi_reagendamento", "visits", R::prospective_tenant, 4,
         {"quero remarcar a visita do {imovel} para {dia}", "posso visitar o apartamento em outro horário",
          "surgiu um imprevisto, dá para visitar {dia} à tarde?"}},
        {"ft_ag_alteracao", "partners", R::photographer, 0,
         {"preciso alterar o horário da sessão de fotos no {imovel}", "a sessão de fotos de {dia} precisa mudar de horário",
          "o cliente pediu para trocar o horário das fotos do {imovel}"}},
        {"iq_rescisao", "contracts", R::tenant, 2,
         {"quero sair do apartamento antes do fim do prazo, qual a multa", "vou me mudar {dia} e preciso devolver o imóvel",
          "como faço a rescisão do meu contrato de locação"}},
        {"cr_pg", "payments", R::agent, 1,
         {"minha comissão de corretagem do {imovel} não foi paga", "quando recebo a comissão da locação que intermediei",
          "a nota da minha corretagem está pendente"}},
        {"mn_chave_perdida", "maintenance", R::tenant, 3,
         {"perdi a chave do meu apartamento, preciso de uma cópia", "a fechadura emperrou e não consigo entrar em casa",
          "meu molho de chaves foi roubado, preciso trocar o miolo"}},
        {"iq_reajuste_aluguel", "contracts", R::tenant, 7,
         {"o reajuste do meu aluguel veio muito alto", "não concordo com o índice de reajuste deste ano",
          "quando o aluguel vai ser reajustado"}},
        {"pp_anuncio_fotos", "owners", R::owner, 6,
         {"meu imóvel está anunciado com fotos escuras, quero refazer", "o anúncio do meu apartamento está sem fotos da sala",
          "quero atualizar o anúncio com a reforma nova"}},
        {"cr_visita_repasse", "partners", R::agent, 0,
         {"meu cliente desistiu da visita com corretor parceiro no {imovel}",
          "preciso repassar a visita do meu cliente para outro corretor",
          "o cliente que eu atendo não vai mais, como repasso a visita"}},
        {"iq_pr_reserva", "contracts", R::prospective_tenant, 2,
         {"minha proposta foi aceita, quando assino", "quero garantir a reserva do {imovel} enquanto analisam a documentação",
          "enviei os documentos da proposta, falta assinar"}},
        {"ft_entrega_fotos", "partners", R::photographer, 6,
         {"já fiz o upload das fotos do {imovel}, falta aprovar", "o sistema não aceita o envio das minhas fotos",
          "entreguei as fotos ontem e não recebi confirmação"}},
        {"pp_aprovacao_orcamento", "maintenance", R::owner, 5,
         {"recebi o orçamento do conserto do {imovel}, posso aprovar?", "o orçamento da manutenção está muito caro",
          "quero outro orçamento antes de aprovar o reparo"}},
        {"vi_chave_retirada", "visits", R::prospective_tenant, 3,
         {"onde retiro a chave para conhecer o imóvel sozinho", "a portaria não liberou a chave para a visita de {dia}",
          "o cofre de chaves do {imovel} não abre com o código"}},
        {"ft_ag_nova_sessao", "partners", R::photographer, 4,
         {"quero pegar mais sessões de fotos esta semana", "tem agenda livre para fotografar {dia}?",
          "posso fazer uma nova sessão de fotos no {imovel}"}},
        {"cr_vistoria_entrega", "contracts", R::agent, 5,
         {"a vistoria de entrada do {imovel} apontou defeitos", "preciso do laudo de vistoria para o meu cliente",
          "a vistoria de saída não bate com a de entrada"}},
        {"pp_reducao_aluguel", "owners", R::owner, 7,
         {"meu imóvel está vago há meses, devo baixar o preço", "quero reduzir o aluguel anunciado do {imovel}",
          "acho que o valor sugerido para meu imóvel está alto"}},
        {"iq_mudanca_data_entrada", "contracts", R::tenant, 4,
         {"preciso adiar a data da minha mudança para o {imovel}", "consigo antecipar a entrada no apartamento?",
          "a data de início do contrato precisa mudar para {dia}"}},
        {"vi_proposta_valor", "visits", R::prospective_tenant, 7,
         {"gostei do {imovel} e quero oferecer um valor menor", "aceitam proposta abaixo do anunciado?",
          "posso fazer uma contraproposta de aluguel"}},
        {"cr_anuncio_captacao", "partners", R::agent, 6,
         {"captei um imóvel novo e quero anunciar", "como cadastro o imóvel que captei para anúncio",
          "o proprietário que indiquei quer anunciar o {imovel}"}},
        {"ft_acesso_imovel", "partners", R::photographer, 3,
         {"cheguei para fotografar e o porteiro não liberou a entrada", "não tenho acesso ao {imovel} para as fotos",
          "ninguém atende no imóvel da sessão de fotos"}},
        {"pp_cm_venda_imovel", "owners", R::owner, 2,
         {"vou vender meu imóvel alugado, como fica a locação", "recebi uma proposta de compra do {imovel} que está alugado",
          "quero colocar o apartamento alugado à venda"}},
    };
    return c;
  }();
  return catalog;
}

tabular::FeatureSchema profile_schema() {
  using tabular::Column;
  using tabular::ColumnKind;
  std::vector<std::string> reasons;
  for (const auto& r : default_catalog().reasons) reasons.push_back(r.code);
  std::sort(reasons.begin(), reasons.end());
  reasons.push_back("none");
  std::vector<std::string> messages;
  for (const auto& d : default_catalog().departments) messages.push_back(auto_message_type(d));
  messages.push_back("none");
  const std::vector<std::string> flag{"false", "true"};
  tabular::FeatureSchema schema;
  schema.columns = {
      {"last_auto_msg_type", ColumnKind::categorical, messages},
      {"hours_since_last_auto_msg", ColumnKind::numeric, {}},
      {"last_ticket_reason", ColumnKind::categorical, reasons},
      {"days_since_last_ticket", ColumnKind::numeric, {}},
      {"is_registered_agent", ColumnKind::categorical, flag},
      {"is_photographer", ColumnKind::categorical, flag},
      {"n_rented_as_owner", ColumnKind::numeric, {}},
      {"n_ended_contracts_as_tenant", ColumnKind::numeric, {}},
      {"n_active_contracts_as_tenant", ColumnKind::numeric, {}},
      {"active_visit_scheduled", ColumnKind::categorical, flag},
      {"has_open_proposal", ColumnKind::categorical, flag},
      {"account_age_days", ColumnKind::numeric, {}},
  };
  return schema;
}

void CorpusSpec::validate(const Catalog& catalog) const {
  const auto rate = [](double r, const char* name) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorCode::invalid_argument, std::string(name) + " must lie in [0, 1]");
  };
  rate(ambiguity_rate, "ambiguity_rate");
  rate(label_noise, "label_noise");
  rate(role_noise, "role_noise");
  rate(auto_message_match, "auto_message_match");
  rate(no_context_rate, "no_context_rate");
  rate(low_value_rate, "low_value_rate");
  rate(returning_client_rate, "returning_client_rate");
  rate(context_label_noise, "context_label_noise");
  if (no_context_rate + low_value_rate + returning_client_rate > 1.0) {
    throw Error(ErrorCode::invalid_argument, "context label rates exceed 1");
  }
  if (catalog.reasons.empty()) throw Error(ErrorCode::invalid_argument, "empty reason catalog");
  if (size < catalog.reasons.size()) {
    throw Error(ErrorCode::invalid_argument, "corpus size " + std::to_string(size) + " is smaller than the " +
                                                 std::to_string(catalog.reasons.size()) + "-reason catalog");
  }
  if (embedding_dimension == 0) throw Error(ErrorCode::invalid_argument, "embedding dimension must be positive");
  if (!(power_law_exponent >= 0.0) || !(embedding_noise >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "exponent and noise must be non-negative");
  }
}

namespace {

constexpr std::int64_t kStart = 1556668800;  // 2019-05-01T00:00:00Z

const std::vector<std::string> kDays{"amanhã", "hoje",  "segunda", "terça",   "quarta",
                                     "sexta",  "sábado", "dia 12", "dia 25", "semana que vem"};
const std::vector<std::string> kGreetings{"oi, ", "olá, ", "bom dia, ", "boa tarde! ", "oi, tudo bem? ", "olá, boa noite. "};
const std::vector<std::string> kClosings{" obrigado", ", aguardo retorno", " por favor", ". obrigada!", "!!"};
const std::vector<std::string> kNoContext{
    "oi",           "olá",           "bom dia",           "boa tarde",          "boa noite",
    "oi, tudo bem?", "preciso de ajuda", "alguém pode me ajudar?", "tenho uma dúvida", "quero falar com um atendente",
    "alô",          "oi, preciso de ajuda", "olá, bom dia",  "pode me ajudar?",    "atendimento"};
const std::vector<std::string> kLowValue{"obrigado", "obrigada!", "ok",      "valeu",  "certo",
                                         "beleza",   "ok, obrigado", "entendi, valeu", "perfeito", "show"};
const std::vector<std::string> kReturning{"sou eu de novo", "voltei, sobre aquele assunto de ontem",
                                          "continuando o atendimento anterior", "ainda sobre o meu chamado",
                                          "então, como falei antes", "retomando a conversa"};

std::string strip_accents(std::string s) {
  static const std::vector<std::pair<std::string, std::string>> table{
      {"á", "a"}, {"à", "a"}, {"â", "a"}, {"ã", "a"}, {"é", "e"}, {"ê", "e"}, {"í", "i"}, {"ó", "o"},
      {"ô", "o"}, {"õ", "o"}, {"ú", "u"}, {"ç", "c"}, {"Á", "A"}, {"É", "E"}, {"Ó", "O"}, {"Ç", "C"}};
  for (const auto& [from, to] : table) {
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
      s.replace(pos, from.size(), to);
    }
  }
  return s;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) s.replace(pos, from.size(), to);
  return s;
}

std::string fill(std::string tpl, Rng& rng) {
  if (tpl.find("{dia}") != std::string::npos) tpl = replace_all(tpl, "{dia}", rng.pick(kDays));
  if (tpl.find("{imovel}") != std::string::npos) {
    static const std::vector<std::string> kinds{"apartamento ", "imóvel ", "apto ", "casa "};
    tpl = replace_all(tpl, "{imovel}", rng.pick(kinds) + std::to_string(100 + rng.below(9900)));
  }
  return tpl;
}

/// Surface variation: greetings, closings, casing, dropped accents.
std::string decorate(std::string s, Rng& rng) {
  if (rng.bernoulli(0.3)) s = rng.pick(kGreetings) + s;
  if (rng.bernoulli(0.2)) s += rng.pick(kClosings);
  if (rng.bernoulli(0.3)) s = strip_accents(std::move(s));
  const double casing = rng.uniform();
  if (casing < 0.08) {
    for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  } else if (casing < 0.6 && !s.empty()) {
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  }
  return s;
}

std::string flag(bool b) { return b ? "true" : "false"; }

tabular::TabularRecord make_profile(Role role, const std::string& reason, const std::string& department,
                                    const CorpusSpec& spec, const Catalog& catalog, Rng& rng) {
  tabular::TabularRecord p;
  auto& v = p.values;
  if (rng.bernoulli(spec.role_noise)) role = static_cast<Role>(rng.below(5));

  std::string message = "none";
  if (rng.bernoulli(spec.auto_message_match)) {
    message = auto_message_type(department);
  } else if (rng.bernoulli(0.8)) {
    message = auto_message_type(rng.pick(catalog.departments));
  }
  v["last_auto_msg_type"] = message;
  if (message != "none") {
    const double mean = message == auto_message_type(department) ? 24.0 : 240.0;
    v["hours_since_last_auto_msg"] = std::round(-mean * std::log(1.0 - rng.uniform()) * 10.0) / 10.0;
  }

  const double history = rng.uniform();
  if (history < 0.25) {
    v["last_ticket_reason"] = reason;
  } else if (history < 0.6) {
    v["last_ticket_reason"] = catalog.reasons[rng.below(catalog.reasons.size())].code;
  } else {
    v["last_ticket_reason"] = std::string("none");
  }
  if (std::get<std::string>(v["last_ticket_reason"]) != "none") {
    v["days_since_last_ticket"] = static_cast<double>(1 + rng.below(365));
  }

  v["is_registered_agent"] = flag(role == Role::agent);
  v["is_photographer"] = flag(role == Role::photographer);
  v["n_rented_as_owner"] = role == Role::owner ? static_cast<double>(1 + rng.below(3)) : (rng.bernoulli(0.03) ? 1.0 : 0.0);
  v["n_ended_contracts_as_tenant"] = static_cast<double>(rng.below(role == Role::tenant ? 3 : 2));
  v["n_active_contracts_as_tenant"] = role == Role::tenant ? static_cast<double>(1 + rng.below(2)) : 0.0;
  v["active_visit_scheduled"] = flag(role == Role::prospective_tenant ? rng.bernoulli(0.85) : rng.bernoulli(0.05));
  v["has_open_proposal"] = flag(role == Role::prospective_tenant ? rng.bernoulli(0.4) : rng.bernoulli(0.02));
  v["account_age_days"] = static_cast<double>(rng.below(2000));
  return p;
}

std::vector<double> reason_weights(const CorpusSpec& spec, const Catalog& catalog) {
  std::vector<double> w(catalog.reasons.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::pow(static_cast<double>(i + 1), -spec.power_law_exponent);
  return w;
}

/// Ticket text plus the template source: reason index, or -(group+1) when shared.
std::pair<std::string, int> ticket_text(std::size_t reason, const CorpusSpec& spec, const Catalog& catalog, Rng& rng) {
  const auto& r = catalog.reasons[reason];
  if (rng.bernoulli(spec.ambiguity_rate)) {
    return {decorate(fill(rng.pick(catalog.group_templates.at(static_cast<std::size_t>(r.group))), rng), rng), -(r.group + 1)};
  }
  return {decorate(fill(rng.pick(r.templates), rng), rng), static_cast<int>(reason)};
}

std::string ticket_id(std::size_t i) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "t-%06zu", i);
  return buffer;
}

}  // namespace

Corpus generate(const CorpusSpec& spec, const Catalog& catalog) {
  spec.validate(catalog);
  Corpus corpus;
  Rng rng(spec.seed);
  Rng embed_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng context_rng(spec.seed ^ 0xc2b2ae3d27d4eb4fULL);

  // planted centroids: one per reason, groups average their members
  const std::size_t dim = spec.embedding_dimension;
  std::vector<std::vector<double>> centroids(catalog.reasons.size(), std::vector<double>(dim));
  for (auto& c : centroids) {
    for (auto& x : c) x = embed_rng.normal();
  }
  std::vector<std::vector<double>> group_centroids(catalog.group_templates.size(), std::vector<double>(dim, 0.0));
  std::vector<std::size_t> group_sizes(catalog.group_templates.size(), 0);
  for (std::size_t i = 0; i < catalog.reasons.size(); ++i) {
    const auto g = static_cast<std::size_t>(catalog.reasons[i].group);
    for (std::size_t d = 0; d < dim; ++d) group_centroids[g][d] += centroids[i][d];
    ++group_sizes[g];
  }
  for (std::size_t g = 0; g < group_centroids.size(); ++g) {
    for (auto& x : group_centroids[g]) x /= static_cast<double>(std::max<std::size_t>(1, group_sizes[g]));
  }

  corpus.planted = reason::EmbeddingTable(dim);
  corpus.oracle = reason::EmbeddingTable(catalog.reasons.size());
  const auto weights = reason_weights(spec, catalog);
  std::int64_t clock = kStart;
  std::vector<float> planted(dim), oracle(catalog.reasons.size());
  for (std::size_t i = 0; i < spec.size; ++i) {
    const std::size_t true_reason = rng.categorical(weights);
    auto [text, source] = ticket_text(true_reason, spec, catalog, rng);
    const auto& spec_reason = catalog.reasons[true_reason];
    Ticket t;
    t.id = ticket_id(i + 1);
    clock += 1 + static_cast<std::int64_t>(rng.below(900));
    t.timestamp = clock;
    t.text = std::move(text);
    t.profile = make_profile(spec_reason.role, spec_reason.code, spec_reason.department, spec, catalog, rng);
    std::size_t label = true_reason;
    if (rng.bernoulli(spec.label_noise)) label = rng.below(catalog.reasons.size());
    t.reason = catalog.reasons[label].code;
    t.department = catalog.reasons[label].department;

    const auto& centre = source >= 0 ? centroids[static_cast<std::size_t>(source)]
                                     : group_centroids[static_cast<std::size_t>(-source - 1)];
    for (std::size_t d = 0; d < dim; ++d) planted[d] = static_cast<float>(centre[d] + spec.embedding_noise * embed_rng.normal());
    corpus.planted.add(t.id, planted);
    std::fill(oracle.begin(), oracle.end(), 0.0f);
    oracle[label] = 1.0f;
    corpus.oracle.add(t.id, oracle);
    corpus.tickets.push_back(std::move(t));
  }

  for (std::size_t i = 0; i < spec.context_size; ++i) {
    const double u = context_rng.uniform();
    context::ContextAnnotation a;
    if (u < spec.no_context_rate) {
      a = {decorate(context_rng.pick(kNoContext), context_rng), context::ContextLabel::no_context};
    } else if (u < spec.no_context_rate + spec.low_value_rate) {
      a = {decorate(context_rng.pick(kLowValue), context_rng), context::ContextLabel::low_value};
    } else if (u < spec.no_context_rate + spec.low_value_rate + spec.returning_client_rate) {
      a = {decorate(context_rng.pick(kReturning), context_rng), context::ContextLabel::returning_client};
    } else {
      const auto reason = context_rng.categorical(weights);
      a = {ticket_text(reason, spec, catalog, context_rng).first, context::ContextLabel::has_context};
    }
    if (context_rng.bernoulli(spec.context_label_noise)) a.label = static_cast<context::ContextLabel>(context_rng.below(4));
    corpus.context.push_back(std::move(a));
  }
  return corpus;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kHeader = "id\ttimestamp\treason\tdepartment\ttext\tprofile";

}  // namespace

void write_dataset(std::span<const Ticket> tickets, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << kHeader << '\n';
  for (const auto& t : tickets) {
    out << t.id << '\t' << t.timestamp << '\t' << t.reason << '\t' << t.department << '\t' << io::escape_field(t.text)
        << '\t' << t.profile.to_json().dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::io_error, "failed writing " + path.string());
}

DatasetReader::DatasetReader(const std::filesystem::path& path) : lines_(path) {
  std::string header;
  if (!lines_.next(header) || header != kHeader) {
    throw Error(ErrorCode::malformed_row, path.string() + ": line 1: expected header '" + std::string(kHeader) + "'");
  }
}

std::optional<Ticket> DatasetReader::next() {
  std::string line;
  if (!lines_.next(line)) return std::nullopt;
  const auto where = lines_.path().string() + ": line " + std::to_string(lines_.line_number());
  const auto fields = io::split_tabs(line);
  if (fields.size() != 6) {
    throw Error(ErrorCode::malformed_row, where + ": expected 6 fields, found " + std::to_string(fields.size()) +
                                              (lines_.terminated() ? "" : " (truncated final line)"));
  }
  Ticket t;
  t.id = fields[0];
  t.reason = fields[2];
  t.department = fields[3];
  try {
    std::size_t used = 0;
    t.timestamp = std::stoll(fields[1], &used);
    if (used != fields[1].size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw Error(ErrorCode::malformed_row, where + ": bad timestamp '" + fields[1] + "'");
  }
  try {
    t.text = io::unescape_field(fields[4]);
    t.profile = tabular::TabularRecord::from_json(json::parse(fields[5]));
  } catch (const std::exception& e) {
    throw Error(ErrorCode::malformed_row, where + ": " + e.what() + (lines_.terminated() ? "" : " (truncated final line)"));
  }
  if (t.id.empty() || t.reason.empty() || t.department.empty()) {
    throw Error(ErrorCode::malformed_row, where + ": empty id, reason or department");
  }
  return t;
}

std::vector<Ticket> read_dataset(const std::filesystem::path& path) {
  DatasetReader reader(path);
  std::vector<Ticket> out;
  while (auto t = reader.next()) out.push_back(std::move(*t));
  return out;
}

void write_corpus(const Corpus& corpus, const Catalog& catalog, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_dataset(corpus.tickets, dir / "dataset.tsv");
  context::write_annotations(corpus.context, dir / "context.tsv");
  corpus.planted.save_binary(dir / "embeddings_planted.bin");
  corpus.oracle.save_binary(dir / "embeddings_oracle.bin");
  io::save_json(catalog.department_map().to_json(), dir / "departments.json");
  io::save_json(profile_schema().to_json(), dir / "schema.json");
  io::save_json(catalog.heuristic_lookup().to_json(), dir / "heuristic.json");
}

}  // namespace triage::corpus
